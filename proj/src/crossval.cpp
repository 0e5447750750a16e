#include "cseg/crossval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "cseg/localization.hpp"
#include "cseg/metrics.hpp"
#include "cseg/seed.hpp"

namespace cseg {

using nlohmann::json;

void CrossvalConfig::validate() const {
    require(folds >= 2, "cross-validation needs at least two folds");
    pipeline.validate();
    if (run_baseline) baseline.validate();
}

std::vector<const CaseRow*> CrossvalReport::variant_rows(const std::string& variant) const {
    std::vector<const CaseRow*> out;
    for (const auto& r : rows)
        if (r.variant == variant) out.push_back(&r);
    return out;
}

namespace {

void say(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

CaseRow box_row(const std::string& id, const std::string& variant, const BoxStats& s) {
    CaseRow r;
    r.case_id = id;
    r.variant = variant;
    r.recall = s.recall;
    r.volume_reduction = s.volume_reduction;
    return r;
}

// Overlap and surface cells for a predicted mask; distances stay empty when
// either mask is empty.
CaseRow mask_row(const std::string& id, const std::string& variant, const LabelVolume& pred, const LabelVolume& gt,
                 const BoxStats& box) {
    CaseRow r = box_row(id, variant, box);
    const auto o = overlap_metrics(pred, gt);
    r.dsc = o.dsc;
    r.jaccard = o.jaccard;
    try {
        const auto s = surface_distances(pred, gt);
        r.hausdorff_mm = s.hausdorff_mm;
        r.avgdist_mm = s.avgdist_mm;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::UndefinedMetric) throw;
    }
    return r;
}

struct CaseOutcome {
    std::vector<CaseRow> rows;
    std::vector<CaseError> errors;
};

CaseError make_error(const std::string& id, const std::string& stage, const std::exception& e) {
    const auto* err = dynamic_cast<const Error*>(&e);
    return {id, stage, err ? std::string(error_code_name(err->code())) : "internal", e.what()};
}

// Variants whose models are missing are skipped; the fold loop has already
// recorded why.
CaseOutcome evaluate_case(const Case& c, const Stage1Models* s1, const Stage2Models* s2,
                          const LocalizerModel* baseline, const CrossvalConfig& cfg) {
    CaseOutcome out;
    const auto& pc = cfg.pipeline;
    if (baseline) {
        try {
            try {
                const auto b = predict_bbox(*baseline, c.ct);
                out.rows.push_back(box_row(c.id, "baseline", bbox_stats(b.box, c.gt_interior)));
            } catch (const Error& e) {
                // A localizer without accepted votes covers nothing.
                if (e.code() != ErrorCode::NoCandidate) throw;
                auto r = box_row(c.id, "baseline", {});
                r.recall = 0.0;
                r.volume_reduction = 1.0;
                out.rows.push_back(r);
            }
        } catch (const std::exception& e) {
            out.errors.push_back(make_error(c.id, "baseline", e));
        }
    }
    if (!s1) return out;
    std::string stage = "localization";
    try {
        const auto input = prepare_input(c.ct, pc);
        const auto loc = localize(*s1, input, pc);
        const auto box = bbox_stats(loc.candidate.box, c.gt_interior);
        out.rows.push_back(box_row(c.id, "localization", box));
        if (!s2) return out;

        stage = "stage2";
        const auto maps = stage2_maps(*s2, c.ct, input, loc.candidate.box);
        stage = "segmentation";
        const auto seg = segment(*s2, maps, c.ct.dims(), pc);
        for (std::size_t z = 0; z < seg.superpixels.slices.size(); ++z) {
            const auto& h = seg.superpixels.slices[z];
            if (!is_partition(h.level1, h.level1_count) || !is_partition(h.level2, h.level2_count))
                fail(ErrorCode::NumericFailure, "superpixels of slice " + std::to_string(z) + " are not a partition");
        }
        out.rows.push_back(mask_row(c.id, "meanmax", seg.meanmax, c.gt_interior, box));
        out.rows.push_back(mask_row(c.id, "hnn-rf", seg.rf, c.gt_interior, box));
        const auto oracle = optimal_assignment(seg.superpixels, c.gt_interior);
        out.rows.push_back(mask_row(c.id, "oracle", oracle.mask, c.gt_interior, box));

        if (cfg.pooling_ablation) {
            stage = "pooling";
            for (const auto& mode : PoolingMode::all()) {
                const auto pooled = pool_planes(maps.interior, mode);
                const auto mask =
                    pooled_segmentation(pooled, s2->pooled_threshold.at(mode.name()), maps.region, c.ct.dims());
                out.rows.push_back(mask_row(c.id, "pool:" + mode.name(), mask, c.gt_interior, box));
            }
        }
    } catch (const std::exception& e) {
        out.errors.push_back(make_error(c.id, stage, e));
    }
    return out;
}

std::string cell(const std::optional<double>& v) {
    if (!v) return {};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

json summary_json(const Summary& s) {
    return {{"count", s.count}, {"mean", s.mean}, {"std", s.std}, {"median", s.median},
            {"min", s.min},     {"max", s.max},   {"p10", s.p10}, {"p90", s.p90}};
}

using Column = std::optional<double> CaseRow::*;

const std::vector<std::pair<std::string, Column>>& metric_columns() {
    static const std::vector<std::pair<std::string, Column>> cols{
        {"dsc", &CaseRow::dsc},
        {"jaccard", &CaseRow::jaccard},
        {"hausdorff_mm", &CaseRow::hausdorff_mm},
        {"avgdist_mm", &CaseRow::avgdist_mm},
        {"recall", &CaseRow::recall},
        {"volume_reduction", &CaseRow::volume_reduction}};
    return cols;
}

}  // namespace

CrossvalReport crossval_run(const std::vector<Case>& corpus, const CrossvalConfig& cfg, const Logger& log) {
    cfg.validate();
    std::map<std::string, const Case*> by_id;
    std::vector<std::string> ids;
    for (const auto& c : corpus) {
        require(by_id.emplace(c.id, &c).second, "duplicate case id '" + c.id + "'");
        ids.push_back(c.id);
    }
    const auto folds = split_folds(ids, cfg.folds, derive_seed(cfg.seed, 0));

    CrossvalReport report;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        FoldInfo info;
        info.test = folds[f];
        for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) info.train.insert(info.train.end(), folds[g].begin(), folds[g].end());
        std::sort(info.train.begin(), info.train.end());
        std::vector<const Case*> train;
        for (const auto& id : info.train) train.push_back(by_id.at(id));

        const std::string tag = "fold " + std::to_string(f + 1) + "/" + std::to_string(folds.size());
        say(log, tag + ": training on " + std::to_string(train.size()) + " cases");
        // Each model trains on its own; a failure is recorded against every
        // test case and only the variants that need that model are skipped.
        auto record = [&](const std::string& stage, const std::exception& e) {
            for (const auto& id : info.test) report.errors.push_back(make_error(id, stage, e));
        };
        std::optional<Stage1Models> s1;
        std::optional<Stage2Models> s2;
        std::optional<LocalizerModel> baseline;
        try {
            s1 = train_stage1(train, cfg.pipeline, derive_seed(cfg.seed, 100 + f), log);
        } catch (const std::exception& e) {
            record("train-stage1", e);
        }
        if (s1) {
            try {
                s2 = train_stage2(train, cfg.pipeline, derive_seed(cfg.seed, 200 + f), log);
                info.rf_threshold = s2->rf_threshold;
                info.pooled_threshold = s2->pooled_threshold;
            } catch (const std::exception& e) {
                record("train-stage2", e);
            }
        }
        if (cfg.run_baseline) {
            try {
                auto bc = cfg.baseline;
                bc.seed = derive_seed(cfg.seed, 300 + f);
                baseline = train_localizer(train, bc);
                info.warnings = baseline->warnings;
            } catch (const std::exception& e) {
                record("train-baseline", e);
            }
        }

        for (const auto& id : info.test) {
            auto outcome = evaluate_case(*by_id.at(id), s1 ? &*s1 : nullptr, s2 ? &*s2 : nullptr,
                                         baseline ? &*baseline : nullptr, cfg);
            for (auto& r : outcome.rows) report.rows.push_back(std::move(r));
            for (auto& e : outcome.errors) report.errors.push_back(std::move(e));
            say(log, tag + ": evaluated " + id);
        }
        report.folds.push_back(std::move(info));
    }
    std::sort(report.rows.begin(), report.rows.end(), [](const CaseRow& a, const CaseRow& b) {
        return std::tie(a.case_id, a.variant) < std::tie(b.case_id, b.variant);
    });
    std::stable_sort(report.errors.begin(), report.errors.end(),
                     [](const CaseError& a, const CaseError& b) { return a.case_id < b.case_id; });
    return report;
}

std::string report_csv(const CrossvalReport& report) {
    std::string out;
    for (std::size_t i = 0; i < kCsvColumns.size(); ++i) out += (i ? "," : "") + kCsvColumns[i];
    out += '\n';
    for (const auto& r : report.rows) {
        out += r.case_id + ',' + r.variant;
        for (const auto& [name, col] : metric_columns()) out += ',' + cell(r.*col);
        out += '\n';
    }
    return out;
}

std::array<int, 6> recall_histogram(const std::vector<double>& recalls) {
    std::array<int, 6> bins{};
    for (const double r : recalls) {
        if (r >= 1.0)
            ++bins[5];
        else if (r >= 0.95)
            ++bins[4];
        else if (r >= 0.9)
            ++bins[3];
        else if (r >= 0.8)
            ++bins[2];
        else if (r >= 0.6)
            ++bins[1];
        else
            ++bins[0];
    }
    return bins;
}

json report_summary(const CrossvalReport& report) {
    std::vector<std::string> variants;
    {
        std::set<std::string> seen;
        for (const auto& r : report.rows)
            if (seen.insert(r.variant).second) variants.push_back(r.variant);
        std::sort(variants.begin(), variants.end());
    }
    std::set<std::string> case_ids;
    for (const auto& r : report.rows) case_ids.insert(r.case_id);

    json j;
    j["cases"] = case_ids.size();
    j["folds"] = report.folds.size();

    json per_variant = json::object();
    json histograms = json::object();
    json worst_hd = json::object();
    for (const auto& v : variants) {
        const auto rows = report.variant_rows(v);
        json cols = json::object();
        for (const auto& [name, col] : metric_columns()) {
            std::vector<double> vals;
            for (const auto* r : rows)
                if (r->*col) vals.push_back(*(r->*col));
            if (!vals.empty()) cols[name] = summary_json(summarize(vals));
        }
        cols["rows"] = rows.size();
        per_variant[v] = cols;

        std::vector<double> recalls;
        const CaseRow* worst = nullptr;
        for (const auto* r : rows) {
            if (r->recall) recalls.push_back(*r->recall);
            if (r->hausdorff_mm && (!worst || *r->hausdorff_mm > *worst->hausdorff_mm)) worst = r;
        }
        if (!recalls.empty()) {
            const auto h = recall_histogram(recalls);
            histograms[v] = {{"[0,0.6)", h[0]},    {"[0.6,0.8)", h[1]}, {"[0.8,0.9)", h[2]},
                             {"[0.9,0.95)", h[3]}, {"[0.95,1)", h[4]},  {"1", h[5]}};
        }
        if (worst) worst_hd[v] = {{"case_id", worst->case_id}, {"hausdorff_mm", *worst->hausdorff_mm}};
    }
    j["variants"] = per_variant;
    j["recall_histogram"] = histograms;
    j["worst_hausdorff"] = worst_hd;

    // Paired test over cases that have both values.
    json tests = json::object();
    std::map<std::string, const CaseRow*> a, b;
    for (const auto* r : report.variant_rows("meanmax")) a[r->case_id] = r;
    for (const auto* r : report.variant_rows("hnn-rf")) b[r->case_id] = r;
    for (const auto& [name, col] : metric_columns()) {
        if (name == "recall" || name == "volume_reduction") continue;
        std::vector<double> x, y;
        for (const auto& [id, ra] : a) {
            const auto it = b.find(id);
            if (it == b.end() || !(ra->*col) || !(it->second->*col)) continue;
            x.push_back(*(ra->*col));
            y.push_back(*(it->second->*col));
        }
        try {
            tests[name] = {{"pairs", x.size()}, {"p_value", wilcoxon_signed_rank(x, y)}};
        } catch (const Error& e) {
            tests[name] = {{"pairs", x.size()}, {"p_value", nullptr}, {"note", e.what()}};
        }
    }
    j["wilcoxon_meanmax_vs_hnn_rf"] = tests;

    json folds = json::array();
    for (const auto& f : report.folds)
        folds.push_back({{"test", f.test},
                         {"rf_threshold", f.rf_threshold},
                         {"pooled_threshold", f.pooled_threshold},
                         {"warnings", f.warnings}});
    j["fold_details"] = folds;

    json errors = json::array();
    for (const auto& e : report.errors)
        errors.push_back({{"case_id", e.case_id}, {"stage", e.stage}, {"code", e.code}, {"message", e.message}});
    j["errors"] = errors;
    return j;
}

}  // namespace cseg
