#include <doctest.h>

#include <map>
#include <set>
#include <sstream>

#include "cseg/crossval.hpp"

using namespace cseg;

namespace {

std::vector<Case> toy_corpus(std::size_t n) {
    PhantomConfig pc;
    pc.dims = {32, 32, 32};
    pc.organ_center_lo = 13;
    pc.organ_center_hi = 19;
    pc.organ_semi_axis_lo = 4;
    pc.organ_semi_axis_hi = 6;
    pc.distractor_count = 2;
    pc.seed = 21;
    return generate_corpus(pc, n);
}

CrossvalConfig toy_config() {
    CrossvalConfig cfg;
    cfg.seed = 3;
    hnn::NetConfig net;
    net.stages = {{3, 1}, {4, 1}};
    net.alpha = {1.0, 1.0};
    net.epochs = 2;
    cfg.pipeline.stage1_net = net;
    cfg.pipeline.stage2_net = net;
    cfg.pipeline.boundary_net = net;
    cfg.pipeline.rf.trees = 5;
    cfg.baseline.samples_per_case = 50;
    cfg.baseline.regression.trees = 3;
    cfg.baseline.classifier.trees = 3;
    return cfg;
}

}  // namespace

TEST_SUITE("crossval") {

TEST_CASE("8-case corpus with k = 4") {
    const auto corpus = toy_corpus(8);
    const auto cfg = toy_config();
    const auto report = crossval_run(corpus, cfg);

    REQUIRE(report.folds.size() == 4);
    std::multiset<std::string> tested;
    for (const auto& f : report.folds) {
        CHECK(f.test.size() == 2);
        CHECK(f.train.size() == 6);
        for (const auto& id : f.test) {
            tested.insert(id);
            CHECK(std::find(f.train.begin(), f.train.end(), id) == f.train.end());
        }
    }
    CHECK(tested.size() == 8);
    CHECK(std::set<std::string>(tested.begin(), tested.end()).size() == 8);

    // Every case has exactly one row per variant unless it has an error record.
    std::map<std::string, std::map<std::string, int>> seen;
    for (const auto& r : report.rows) ++seen[r.variant][r.case_id];
    for (const char* v : {"localization", "baseline"}) {
        CHECK(seen[v].size() == 8);
        for (const auto& [id, n] : seen[v]) CHECK(n == 1);
    }
    std::set<std::string> failed;
    for (const auto& e : report.errors) failed.insert(e.case_id);
    for (const char* v : {"meanmax", "hnn-rf"}) {
        for (const auto& [id, n] : seen[v]) CHECK(n == 1);
        CHECK(seen[v].size() + failed.size() >= 8);
    }
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
        const auto& a = report.rows[i - 1];
        const auto& b = report.rows[i];
        CHECK(std::tie(a.case_id, a.variant) < std::tie(b.case_id, b.variant));
    }

    const auto csv = report_csv(report);
    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "case_id,variant,dsc,jaccard,hausdorff_mm,avgdist_mm,recall,volume_reduction");
    std::size_t count = 0;
    for (std::string line; std::getline(lines, line);) ++count;
    CHECK(count == report.rows.size());

    const auto summary = report_summary(report);
    for (const char* v : {"meanmax", "hnn-rf"})
        if (!seen[v].empty()) {
            CHECK(summary["variants"].contains(v));
            for (const char* col : {"dsc", "jaccard", "hausdorff_mm", "avgdist_mm"})
                CHECK(summary["variants"][v].contains(col));
        }
    CHECK(summary.contains("recall_histogram"));
    CHECK(summary.contains("errors"));

    // Same seed, same bytes.
    const auto again = crossval_run(corpus, cfg);
    CHECK(report_csv(again) == csv);
    CHECK(report_summary(again).dump() == summary.dump());
}

TEST_CASE("corpus and fold errors") {
    const auto corpus = toy_corpus(3);
    CHECK_THROWS_AS(crossval_run(corpus, toy_config()), Error);
    auto dup = toy_corpus(4);
    dup[1].id = dup[0].id;
    CHECK_THROWS_AS(crossval_run(dup, toy_config()), Error);
    auto cfg = toy_config();
    cfg.folds = 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("recall histogram bins") {
    const std::vector<double> r{0.0, 0.59, 0.6, 0.79, 0.85, 0.9, 0.949, 0.95, 0.999, 1.0, 1.0};
    CHECK(recall_histogram(r) == std::array<int, 6>{2, 2, 1, 2, 2, 2});
}

}  // TEST_SUITE
