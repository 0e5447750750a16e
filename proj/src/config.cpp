#include "cseg/config.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <type_traits>

#include "cseg/io.hpp"

namespace cseg {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    fail(ErrorCode::InvalidArgument, "config" + (path.empty() ? std::string() : " '" + path + "'") + ": " + what);
}

template <typename T>
void read_value(const json& j, T& v);

template <typename T>
void read_vector(const json& j, std::vector<T>& v) {
    if (!j.is_array()) bad("", "expected an array");
    std::vector<T> out;
    for (const auto& e : j) {
        T item{};
        read_value(e, item);
        out.push_back(std::move(item));
    }
    v = std::move(out);
}

template <typename T>
void read_value(const json& j, T& v) {
    if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) bad("", "expected a boolean");
        v = j.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer()) bad("", "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (!j.is_number_unsigned()) bad("", "expected a non-negative integer");
            const auto u = j.get<std::uint64_t>();
            if (u > std::numeric_limits<T>::max()) bad("", "integer out of range");
            v = static_cast<T>(u);
        } else {
            const auto s = j.get<std::int64_t>();
            if (s < std::numeric_limits<T>::min() || s > std::numeric_limits<T>::max()) bad("", "integer out of range");
            v = static_cast<T>(s);
        }
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!j.is_number()) bad("", "expected a number");
        v = j.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j.is_string()) bad("", "expected a string");
        v = j.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        read_vector(j, v);
    } else if constexpr (std::is_same_v<T, std::vector<hnn::StageConfig>>) {
        read_vector(j, v);
    } else if constexpr (std::is_same_v<T, Dims>) {
        std::vector<int> a;
        read_vector(j, a);
        if (a.size() != 3) bad("", "expected three integers");
        v = {a[0], a[1], a[2]};
    } else if constexpr (std::is_same_v<T, Spacing>) {
        std::vector<double> a;
        read_vector(j, a);
        if (a.size() != 3) bad("", "expected three numbers");
        v = {a[0], a[1], a[2]};
    } else {
        from_json(j, v);
    }
}

// Reads declared keys of one object and rejects the rest.
class Fields {
public:
    explicit Fields(const json& j) : j_(j) {
        if (!j.is_object()) bad("", "expected an object");
    }

    template <typename T>
    void operator()(const char* key, T& v) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            read_value(*it, v);
        } catch (const Error& e) {
            rethrow(key, e);
        }
    }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) bad(key, "unknown key");
    }

private:
    // Nested failures arrive as "config 'a.b': what" or "config: what".
    [[noreturn]] static void rethrow(const std::string& key, const Error& e) {
        const std::string msg = e.what();
        const std::string head = "config '";
        if (msg.starts_with(head)) {
            const auto end = msg.find('\'', head.size());
            bad(key + "." + msg.substr(head.size(), end - head.size()), msg.substr(end + 3));
        }
        if (msg.starts_with("config: ")) bad(key, msg.substr(8));
        bad(key, msg);
    }

    const json& j_;
    std::set<std::string> seen_;
};

json dims_json(const Dims& d) { return json::array({d.x, d.y, d.z}); }
json spacing_json(const Spacing& s) { return json::array({s.x, s.y, s.z}); }

}  // namespace

std::string to_string(BoundaryTarget t) { return t == BoundaryTarget::Shell ? "shell" : "contour"; }

BoundaryTarget parse_boundary_target(const std::string& name) {
    if (name == "shell") return BoundaryTarget::Shell;
    if (name == "contour") return BoundaryTarget::Contour;
    fail(ErrorCode::InvalidArgument, "unknown boundary target '" + name + "'");
}

namespace hnn {

void to_json(json& j, const StageConfig& v) { j = {{"channels", v.channels}, {"depth", v.depth}}; }

void from_json(const json& j, StageConfig& v) {
    Fields f(j);
    f("channels", v.channels);
    f("depth", v.depth);
    f.finish();
}

void to_json(json& j, const NetConfig& v) {
    j = {{"stages", v.stages},
         {"kernel_size", v.kernel_size},
         {"alpha", v.alpha},
         {"learning_rate", v.learning_rate},
         {"momentum", v.momentum},
         {"epochs", v.epochs},
         {"batch_size", v.batch_size},
         {"seed", v.seed}};
}

void from_json(const json& j, NetConfig& v) {
    Fields f(j);
    f("stages", v.stages);
    f("kernel_size", v.kernel_size);
    f("alpha", v.alpha);
    f("learning_rate", v.learning_rate);
    f("momentum", v.momentum);
    f("epochs", v.epochs);
    f("batch_size", v.batch_size);
    f("seed", v.seed);
    f.finish();
}

}  // namespace hnn

namespace forest {

void to_json(json& j, const ForestOptions& v) {
    j = {{"trees", v.trees},
         {"max_depth", v.max_depth},
         {"min_samples_leaf", v.min_samples_leaf},
         {"features_per_node", v.features_per_node},
         {"bootstrap", v.bootstrap},
         {"seed", v.seed}};
}

void from_json(const json& j, ForestOptions& v) {
    Fields f(j);
    f("trees", v.trees);
    f("max_depth", v.max_depth);
    f("min_samples_leaf", v.min_samples_leaf);
    f("features_per_node", v.features_per_node);
    f("bootstrap", v.bootstrap);
    f("seed", v.seed);
    f.finish();
}

}  // namespace forest

void to_json(json& j, const PhantomConfig& v) {
    j = {{"dims", dims_json(v.dims)},
         {"spacing_mm", spacing_json(v.spacing)},
         {"organ_center_lo", v.organ_center_lo},
         {"organ_center_hi", v.organ_center_hi},
         {"organ_semi_axis_lo", v.organ_semi_axis_lo},
         {"organ_semi_axis_hi", v.organ_semi_axis_hi},
         {"lobe_amplitude", v.lobe_amplitude},
         {"organ_hu_lo", v.organ_hu_lo},
         {"organ_hu_hi", v.organ_hu_hi},
         {"body_fraction", v.body_fraction},
         {"body_hu", v.body_hu},
         {"air_hu", v.air_hu},
         {"distractor_count", v.distractor_count},
         {"distractor_radius_lo", v.distractor_radius_lo},
         {"distractor_radius_hi", v.distractor_radius_hi},
         {"distractor_hu_lo", v.distractor_hu_lo},
         {"distractor_hu_hi", v.distractor_hu_hi},
         {"distractor_gap", v.distractor_gap},
         {"noise_sigma", v.noise_sigma},
         {"seed", v.seed}};
}

void from_json(const json& j, PhantomConfig& v) {
    Fields f(j);
    f("dims", v.dims);
    f("spacing_mm", v.spacing);
    f("organ_center_lo", v.organ_center_lo);
    f("organ_center_hi", v.organ_center_hi);
    f("organ_semi_axis_lo", v.organ_semi_axis_lo);
    f("organ_semi_axis_hi", v.organ_semi_axis_hi);
    f("lobe_amplitude", v.lobe_amplitude);
    f("organ_hu_lo", v.organ_hu_lo);
    f("organ_hu_hi", v.organ_hu_hi);
    f("body_fraction", v.body_fraction);
    f("body_hu", v.body_hu);
    f("air_hu", v.air_hu);
    f("distractor_count", v.distractor_count);
    f("distractor_radius_lo", v.distractor_radius_lo);
    f("distractor_radius_hi", v.distractor_radius_hi);
    f("distractor_hu_lo", v.distractor_hu_lo);
    f("distractor_hu_hi", v.distractor_hu_hi);
    f("distractor_gap", v.distractor_gap);
    f("noise_sigma", v.noise_sigma);
    f("seed", v.seed);
    f.finish();
}

void to_json(json& j, const SliceSampling& v) {
    j = {{"organ_stride", v.organ_stride}, {"organ_margin", v.organ_margin}, {"background_every", v.background_every}};
}

void from_json(const json& j, SliceSampling& v) {
    Fields f(j);
    f("organ_stride", v.organ_stride);
    f("organ_margin", v.organ_margin);
    f("background_every", v.background_every);
    f.finish();
}

void to_json(json& j, const WatershedOptions& v) {
    j = {{"smoothing_radius", v.smoothing_radius}, {"levels", v.levels}};
}

void from_json(const json& j, WatershedOptions& v) {
    Fields f(j);
    f("smoothing_radius", v.smoothing_radius);
    f("levels", v.levels);
    f.finish();
}

void to_json(json& j, const SuperpixelOptions& v) {
    j = {{"watershed", v.watershed}, {"level2_quantile", v.level2_quantile}};
}

void from_json(const json& j, SuperpixelOptions& v) {
    Fields f(j);
    f("watershed", v.watershed);
    f("level2_quantile", v.level2_quantile);
    f.finish();
}

void to_json(json& j, const PipelineConfig& v) {
    j = {{"window_lo", v.window_lo},
         {"window_hi", v.window_hi},
         {"stage1_net", v.stage1_net},
         {"stage1_sampling", v.stage1_sampling},
         {"stage2_net", v.stage2_net},
         {"stage2_sampling", v.stage2_sampling},
         {"boundary_net", v.boundary_net},
         {"boundary_target", to_string(v.boundary_target)},
         {"candidate_threshold", v.candidate_threshold},
         {"candidate_pad", v.candidate_pad},
         {"localization_pooling", v.localization_pooling.name()},
         {"training_crop_pad", v.training_crop_pad},
         {"superpixels", v.superpixels},
         {"rf", v.rf}};
}

void from_json(const json& j, PipelineConfig& v) {
    Fields f(j);
    f("window_lo", v.window_lo);
    f("window_hi", v.window_hi);
    f("stage1_net", v.stage1_net);
    f("stage1_sampling", v.stage1_sampling);
    f("stage2_net", v.stage2_net);
    f("stage2_sampling", v.stage2_sampling);
    f("boundary_net", v.boundary_net);
    std::string target = to_string(v.boundary_target);
    f("boundary_target", target);
    v.boundary_target = parse_boundary_target(target);
    f("candidate_threshold", v.candidate_threshold);
    f("candidate_pad", v.candidate_pad);
    std::string pooling = v.localization_pooling.name();
    f("localization_pooling", pooling);
    v.localization_pooling = PoolingMode::parse(pooling);
    f("training_crop_pad", v.training_crop_pad);
    f("superpixels", v.superpixels);
    f("rf", v.rf);
    f.finish();
}

void to_json(json& j, const LocalizerConfig& v) {
    j = {{"probe_count", v.probe_count},
         {"max_radius_mm", v.max_radius_mm},
         {"samples_per_case", v.samples_per_case},
         {"regression", v.regression},
         {"classifier", v.classifier},
         {"accept_radius_mm", v.accept_radius_mm},
         {"grid_stride", v.grid_stride},
         {"accept_threshold", v.accept_threshold},
         {"nms_radius_mm", v.nms_radius_mm},
         {"seed", v.seed}};
}

void from_json(const json& j, LocalizerConfig& v) {
    Fields f(j);
    f("probe_count", v.probe_count);
    f("max_radius_mm", v.max_radius_mm);
    f("samples_per_case", v.samples_per_case);
    f("regression", v.regression);
    f("classifier", v.classifier);
    f("accept_radius_mm", v.accept_radius_mm);
    f("grid_stride", v.grid_stride);
    f("accept_threshold", v.accept_threshold);
    f("nms_radius_mm", v.nms_radius_mm);
    f("seed", v.seed);
    f.finish();
}

void to_json(json& j, const CrossvalConfig& v) {
    j = {{"folds", v.folds},
         {"seed", v.seed},
         {"pipeline", v.pipeline},
         {"baseline", v.baseline},
         {"run_baseline", v.run_baseline},
         {"pooling_ablation", v.pooling_ablation}};
}

void from_json(const json& j, CrossvalConfig& v) {
    Fields f(j);
    f("folds", v.folds);
    f("seed", v.seed);
    f("pipeline", v.pipeline);
    f("baseline", v.baseline);
    f("run_baseline", v.run_baseline);
    f("pooling_ablation", v.pooling_ablation);
    f.finish();
}

void RunConfig::validate() const {
    require(cases >= 1, "corpus needs at least one case");
    phantom.validate();
    crossval.validate();
    require(cases >= crossval.folds, "corpus has fewer cases than folds");
}

void to_json(json& j, const RunConfig& v) {
    j = {{"seed", v.seed}, {"cases", v.cases}, {"phantom", v.phantom}, {"crossval", v.crossval}};
}

void from_json(const json& j, RunConfig& v) {
    Fields f(j);
    f("seed", v.seed);
    f("cases", v.cases);
    f("phantom", v.phantom);
    f("crossval", v.crossval);
    f.finish();
}

RunConfig parse_run_config(const json& j, RunConfig base) {
    from_json(j, base);
    base.validate();
    return base;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_json(path)); }

}  // namespace cseg
