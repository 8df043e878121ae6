#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "platalloc/service.hpp"
#include "http_routes.hpp"

using namespace platalloc;
namespace svc = platalloc::service;
using svc::json;

TEST(SolveDocument, MultiArmDesign) {
    const auto doc = svc::run_solve({{"case", "unrestricted"}, {"mode", "cc"}});
    EXPECT_EQ(doc["regime"], "MultiArm");
    EXPECT_EQ(doc["plan"]["p"][1], json({0.414214, 0.292893, 0.292893}));
    EXPECT_DOUBLE_EQ(doc["variances"]["var1"].get<double>(), 3 + 2 * std::sqrt(2.0));
}

TEST(SolveDocument, SymmetricFixedFractions) {
    const auto doc = svc::run_solve({{"case", "fixed_r1_r2"}, {"r1", 0.3333}, {"r2", 0.3333}});
    EXPECT_NEAR(doc["plan"]["p"][1][0].get<double>(), 0.414214, 2e-4);
    EXPECT_EQ(doc["regime"], "Interior");
}

TEST(SolveDocument, CertifiesEqualVariances) {
    const auto doc = svc::run_solve({{"case", "fixed_r1"}, {"r1", 0.25}, {"mode", "ncc"}});
    EXPECT_LE(doc["equal_variance_gap"].get<double>(), 1e-10);
    EXPECT_EQ(doc["mode"], "ncc");
}

TEST(SolveDocument, ValidationErrors) {
    EXPECT_THROW(svc::run_solve({{"case", "fixed_r1"}}), ValidationError);
    EXPECT_THROW(svc::run_solve({{"case", "fixed_r1_r2"}, {"r1", 0.8}, {"r2", 0.8}}), ValidationError);
    EXPECT_THROW(svc::run_solve({{"case", "unrestricted"}, {"r1", 0.2}}), ValidationError);
    EXPECT_THROW(svc::run_solve({{"case", "unrestricted"}, {"colour", "red"}}), ValidationError);
    EXPECT_THROW(svc::run_solve({{"mode", 3}}), ValidationError);
    EXPECT_THROW(svc::run_solve(json::array()), ValidationError);
}

TEST(SolveDocument, RequestRoundTrips) {
    const json req{{"case", "fixed_r1_r2"}, {"r1", 0.2}, {"r2", 0.5}, {"mode", "ncc"}, {"n", 92.0}, {"sigma", 2.0}};
    const auto doc = svc::run_solve(req);
    EXPECT_EQ(doc["request"], req);
    EXPECT_EQ(json::parse(doc.dump()), doc);
    EXPECT_EQ(svc::run_solve(doc["request"]), doc);
}

TEST(Errors, KindsMapToExitCodesAndStatuses) {
    EXPECT_EQ(svc::exit_code(svc::classify_error(ValidationError("x"))), 2);
    EXPECT_EQ(svc::http_status(svc::classify_error(ValidationError("x"))), 400);
    EXPECT_EQ(svc::exit_code(svc::classify_error(SolverFailure("x"))), 3);
    EXPECT_EQ(svc::http_status(svc::classify_error(DomainError("x"))), 422);
    EXPECT_EQ(svc::error_document(DomainError("bad"))["error"]["kind"], "solver");
}

TEST(CurveDocument, TwoPointGrid) {
    const auto doc = svc::run_curve({{"r1", 0.25}, {"mode", "cc"}, {"grid", 2}});
    EXPECT_EQ(doc["curves"]["cc"].size(), 2u);
    EXPECT_FALSE(doc["curves"].contains("ncc"));
    EXPECT_DOUBLE_EQ(doc["curves"]["cc"][1]["r2"].get<double>(), 0.75);
}

TEST(CurveDocument, ControlShareIsSmallestWhereThePeriodsBalance) {
    const auto doc = svc::run_curve({{"r1", 0.25}, {"mode", "both"}, {"grid", 301}});
    const auto& cc = doc["curves"]["cc"];
    const auto& ncc = doc["curves"]["ncc"];
    ASSERT_EQ(cc.size(), 301u);
    ASSERT_EQ(ncc.size(), 301u);
    std::size_t argmin = 0;
    for (std::size_t k = 0; k < cc.size(); ++k)
        if (cc[k]["regime"] == "Interior" && (cc[argmin]["regime"] != "Interior" || cc[k]["p02"] < cc[argmin]["p02"]))
            argmin = k;
    EXPECT_NEAR(cc[argmin]["r2"].get<double>(), 0.5, 1e-12);
    for (std::size_t k = 0; k < cc.size(); ++k)
        if (cc[k]["regime"] == "Interior" && ncc[k]["regime"] == "Interior")
            EXPECT_LE(ncc[k]["p02"].get<double>(), cc[k]["p02"].get<double>()) << k;
}

TEST(CurveDocument, GridLimits) {
    EXPECT_THROW(svc::run_curve({{"r1", 0.25}, {"grid", 1}}), ValidationError);
    EXPECT_THROW(svc::run_curve({{"r1", 0.25}, {"grid", 10001}}), ValidationError);
    EXPECT_THROW(svc::run_curve({{"r1", 0.25}, {"grid", 2.5}}), ValidationError);
}

TEST(CurveDocument, CsvHasHeaderAndOneLinePerRow) {
    const auto doc = svc::run_curve({{"r1", 0.25}, {"mode", "both"}, {"grid", 5}});
    const auto csv = svc::render("curve", doc, "csv");
    EXPECT_EQ(csv.rfind("mode,r2,p02,p12,p22,max_var,ratio_vs_separate,regime\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
    EXPECT_EQ(csv.find('\r'), std::string::npos);
}

TEST(TablesDocument, CaseStudyRows) {
    const auto doc = svc::run_tables({{"case", "fixed_r1_r2"}, {"r1", 1.0 / 3}, {"r2", 4.0 / 9}, {"n", 92}});
    EXPECT_EQ(doc["strategies"]["optimal"]["counts"]["arm1"], json({16, 8, 0}));
    EXPECT_EQ(doc["strategies"]["sqrt_k"]["counts"]["control"], json({16, 17, 10}));
    EXPECT_EQ(doc["period_totals"], json({31, 41, 20}));
    const auto csv = svc::render("tables", doc, "csv");
    EXPECT_NE(csv.find("optimal,arm2,0,16,10\n"), std::string::npos);
    EXPECT_THROW(svc::run_tables({{"case", "unrestricted"}}), ValidationError);
    EXPECT_THROW(svc::run_tables({{"case", "unrestricted"}, {"n", 2}}), ValidationError);
}

TEST(SimulateDocument, RepeatableAndComplete) {
    const json req{{"case", "fixed_r1_r2"}, {"r1", 0.25}, {"r2", 0.75}, {"n", 92}, {"strategy", "one_to_one"},
                   {"mu0", 4.94}, {"theta", 0.72}, {"reps", 1500}, {"seed", 99}};
    const auto a = svc::run_simulate(req);
    EXPECT_EQ(a, svc::run_simulate(req, 3));
    EXPECT_EQ(a["seed"], 99);
    EXPECT_EQ(a["counts"]["arm2"], json({0, 23, 0}));
    EXPECT_EQ(a["arms"].size(), 2u);
    EXPECT_GT(a["arms"][0]["mc_se"].get<double>(), 0.0);
    EXPECT_EQ(json::parse(a.dump()), a);
}

TEST(SimulateDocument, ExplicitCountsAndTrends) {
    const json req{{"counts", {{"control", {16, 10, 16}}, {"arm1", {16, 10, 0}}, {"arm2", {0, 10, 16}}}},
                   {"trend", {{"kind", "step"}, {"shifts", {0, 0.5, 0.5}}}},
                   {"mode", "ncc"},
                   {"inference", "z"},
                   {"reps", 200}};
    const auto doc = svc::run_simulate(req);
    EXPECT_EQ(doc["trend"]["kind"], "step");
    EXPECT_EQ(doc["inference"], "z");
    EXPECT_THROW(svc::run_simulate({{"counts", req["counts"]}, {"n", 92}}), ValidationError);
    EXPECT_THROW(svc::run_simulate({{"counts", {{"control", {1, 1, 1}}, {"arm1", {1, 1, 1}}, {"arm2", {1, 1, 1}}}}}),
                 ValidationError);
    EXPECT_THROW(svc::run_simulate({{"counts", req["counts"]}, {"reps", 2000}}, 1, {}, 1000), ValidationError);
    EXPECT_THROW(svc::run_simulate({{"counts", req["counts"]}, {"trend", "linear"}}), ValidationError);
}

TEST(Query, ValuesBecomeNumbersWhenTheyParse) {
    EXPECT_EQ(svc::value_from_text("0.25"), json(0.25));
    EXPECT_EQ(svc::value_from_text("92"), json(92));
    EXPECT_EQ(svc::value_from_text("cc"), json("cc"));
    EXPECT_EQ(svc::value_from_text("1e-3"), json(1e-3));
    EXPECT_EQ(svc::value_from_text("0.25x"), json("0.25x"));
}

// ------------------------------------------------------------------ HTTP

class Http : public testing::Test {
protected:
    static void SetUpTestSuite() {
        server_ = new httplib::Server;
        http::install_routes(*server_, 2);
        port_ = server_->bind_to_any_port("127.0.0.1");
        thread_ = new std::thread([] { server_->listen_after_bind(); });
        server_->wait_until_ready();
    }
    static void TearDownTestSuite() {
        server_->stop();
        thread_->join();
        delete thread_;
        delete server_;
    }
    static httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

    static inline httplib::Server* server_ = nullptr;
    static inline std::thread* thread_ = nullptr;
    static inline int port_ = 0;
};

TEST_F(Http, SolveMatchesTheCommandBody) {
    auto res = client().Get("/solve?case=unrestricted&mode=cc");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    EXPECT_EQ(res->body, svc::render("solve", svc::run_solve({{"case", "unrestricted"}, {"mode", "cc"}}), "json"));
}

TEST_F(Http, CurveRowsPerMode) {
    auto res = client().Get("/curve?r1=0.25&mode=both&grid=200");
    ASSERT_TRUE(res);
    const auto doc = json::parse(res->body);
    EXPECT_EQ(doc["curves"]["cc"].size(), 200u);
    EXPECT_EQ(doc["curves"]["ncc"].size(), 200u);
}

TEST_F(Http, TablesAsCsv) {
    auto res = client().Get("/tables?case=fixed_r1_r2&r1=0.3333333333333333&r2=0.3333333333333333&n=92&format=csv");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_NE(res->get_header_value("Content-Type").find("text/csv"), std::string::npos);
    EXPECT_NE(res->body.find("one_to_one,control,16,10,16\n"), std::string::npos);
}

TEST_F(Http, MalformedQueryIs400) {
    auto res = client().Get("/solve?case=fixed_r1");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["error"]["kind"], "validation");
    EXPECT_EQ(client().Get("/curve?r1=0.25&grid=abc")->status, 400);
    EXPECT_EQ(client().Get("/solve?format=xml")->status, 400);
}

TEST_F(Http, PreflightAllowsCrossOrigin) {
    auto res = client().Options("/simulate");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 204);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST_F(Http, SimulateIsRepeatableAndMatchesTheCommand) {
    const json body{{"case", "fixed_r1_r2"}, {"r1", 0.25}, {"r2", 0.75}, {"n", 92}, {"theta", 0.72},
                    {"reps", 1000}, {"seed", 5}};
    auto a = client().Post("/simulate", body.dump(), "application/json");
    auto b = client().Post("/simulate", body.dump(), "application/json");
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->status, 200);
    EXPECT_EQ(a->body, b->body);
    EXPECT_EQ(a->body, svc::render("simulate", svc::run_simulate(body), "json"));
}

TEST_F(Http, SimulateRejectsOversizedAndMalformedRequests) {
    const json big{{"case", "unrestricted"}, {"n", 92}, {"reps", 2'000'000}};
    EXPECT_EQ(client().Post("/simulate", big.dump(), "application/json")->status, 400);
    EXPECT_EQ(client().Post("/simulate?stream=1", big.dump(), "application/json")->status, 400);
    EXPECT_EQ(client().Post("/simulate", "{not json", "application/json")->status, 400);
}

TEST_F(Http, StreamedSimulationEndsWithTheSummary) {
    const json body{{"case", "unrestricted"}, {"n", 92}, {"reps", 3000}, {"seed", 8}};
    auto res = client().Post("/simulate?stream=1", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    std::istringstream lines(res->body);
    std::string line, last;
    int progress = 0;
    while (std::getline(lines, line)) {
        if (json::parse(line).contains("progress")) ++progress;
        last = line;
    }
    EXPECT_EQ(progress, 3);
    EXPECT_EQ(json::parse(last)["result"], svc::run_simulate(body));
}
