#pragma once

// JSON forms of every configuration. Reading merges the document over the
// current values (normally the defaults) and rejects unknown keys and
// mistyped values with InvalidArgument.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "cseg/crossval.hpp"
#include "cseg/datagen.hpp"
#include "cseg/forest.hpp"
#include "cseg/hnn.hpp"
#include "cseg/pipeline.hpp"
#include "cseg/regforest.hpp"

namespace cseg {

namespace hnn {
void to_json(nlohmann::json& j, const StageConfig& v);
void from_json(const nlohmann::json& j, StageConfig& v);
void to_json(nlohmann::json& j, const NetConfig& v);
void from_json(const nlohmann::json& j, NetConfig& v);
}  // namespace hnn

namespace forest {
void to_json(nlohmann::json& j, const ForestOptions& v);
void from_json(const nlohmann::json& j, ForestOptions& v);
}  // namespace forest

void to_json(nlohmann::json& j, const PhantomConfig& v);
void from_json(const nlohmann::json& j, PhantomConfig& v);
void to_json(nlohmann::json& j, const SliceSampling& v);
void from_json(const nlohmann::json& j, SliceSampling& v);
void to_json(nlohmann::json& j, const WatershedOptions& v);
void from_json(const nlohmann::json& j, WatershedOptions& v);
void to_json(nlohmann::json& j, const SuperpixelOptions& v);
void from_json(const nlohmann::json& j, SuperpixelOptions& v);
void to_json(nlohmann::json& j, const PipelineConfig& v);
void from_json(const nlohmann::json& j, PipelineConfig& v);
void to_json(nlohmann::json& j, const LocalizerConfig& v);
void from_json(const nlohmann::json& j, LocalizerConfig& v);
void to_json(nlohmann::json& j, const CrossvalConfig& v);
void from_json(const nlohmann::json& j, CrossvalConfig& v);

// The single document read by `cseg run` and accepted by --config:
// {"seed", "cases", "phantom": {...}, "crossval": {...}}.
struct RunConfig {
    std::uint64_t seed = 7;
    int cases = 100;
    PhantomConfig phantom;
    CrossvalConfig crossval;

    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& v);
void from_json(const nlohmann::json& j, RunConfig& v);

// Merges `j` over `base` and validates the result.
RunConfig parse_run_config(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::string& path);

std::string to_string(BoundaryTarget t);
BoundaryTarget parse_boundary_target(const std::string& name);

}  // namespace cseg
