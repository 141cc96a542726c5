#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mfnet/ideal.hpp"
#include "mfnet/mckean_vlasov.hpp"
#include "mfnet/meanfield.hpp"
#include "mfnet/network.hpp"
#include "mfnet/sgd.hpp"

namespace mfnet::io {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

// Writes through a temporary file and a rename, so readers never see a
// partial file.
void write_file(const fs::path& path, std::string_view content);
std::string read_file(const fs::path& path);

// Binary layout: "MFPV", u32 version, u32 layer count, per layer
// (rows, cols, dim) as u32, then all doubles layer by layer.
void write_params(const fs::path& path, const ParamVector& p);
ParamVector read_params(const fs::path& path);
json params_to_json(const ParamVector& p);
ParamVector params_from_json(const json& j);

// <dir>/<prefix>_manifest.json plus one <prefix>_<step>.bin per checkpoint.
void write_history(const fs::path& dir, const std::string& prefix, const WeightHistory& h);
WeightHistory read_history(const fs::path& dir, const std::string& prefix);

// <base>.json header plus <base>.bin trajectories.
void write_ensemble(const fs::path& base, const PathEnsemble& e);
PathEnsemble read_ensemble(const fs::path& base, const NetworkConfig& cfg);

json picard_to_json(const PicardReport& r, bool wall_time);
json special_to_json(const SpecialDiagnostics& d);

// One row per checkpoint; path errors as path_0 ... path_P columns.
std::string coupling_csv(const CouplingReport& r);
json coupling_summary(const CouplingReport& r);

// Shortest round-trip decimal form.
std::string num(double v);

}  // namespace mfnet::io
