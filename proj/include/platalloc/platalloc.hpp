#pragma once
#include "dataset.hpp"
#include "errors.hpp"
#include "linmod.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "simulator.hpp"
#include "solver.hpp"
#include "tables.hpp"
