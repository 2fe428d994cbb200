#pragma once

#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivmc/common.hpp"

namespace ivmc::harness {

inline constexpr const char* kManifestFile = "manifest.json";

// Per-run manifest chaining pipeline stages through artifact checksums.
// Each stage records the checksums of the files it consumed and produced, so
// a later stage can refuse to run against artifacts that were regenerated or
// edited since.
struct Manifest {
  nlohmann::json stages = nlohmann::json::object();

  static Manifest load(const std::string& dir) {
    Manifest m;
    std::ifstream in(dir + "/" + kManifestFile, std::ios::binary);
    if (!in) return m;
    nlohmann::json j;
    in >> j;
    if (j.contains("stages")) m.stages = j["stages"];
    return m;
  }

  void save(const std::string& dir) const {
    std::ofstream out(dir + "/" + kManifestFile, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest in " + dir);
    nlohmann::json j = {{"stages", stages}};
    out << j.dump(2) << "\n";
  }

  void record(const std::string& dir, const std::string& stage, std::uint64_t seed,
              const std::vector<std::string>& inputs,
              const std::vector<std::string>& outputs) {
    nlohmann::json entry;
    entry["seed"] = seed;
    entry["inputs"] = nlohmann::json::object();
    entry["outputs"] = nlohmann::json::object();
    for (const auto& f : inputs) entry["inputs"][f] = file_checksum(dir + "/" + f);
    for (const auto& f : outputs) entry["outputs"][f] = file_checksum(dir + "/" + f);
    stages[stage] = entry;
  }

  // Which stage produced this artifact, and with what checksum.
  std::pair<std::string, std::string> producer_of(const std::string& file) const {
    for (auto it = stages.begin(); it != stages.end(); ++it) {
      const auto& outs = it.value()["outputs"];
      if (outs.contains(file)) return {it.key(), outs[file].get<std::string>()};
    }
    throw std::runtime_error("manifest: artifact '" + file +
                             "' has no producing stage; run the earlier pipeline "
                             "stages first");
  }

  // Refuse to consume an artifact whose bytes no longer match what the
  // producing stage recorded.
  void verify(const std::string& dir, const std::string& file) const {
    const auto [stage, recorded] = producer_of(file);
    const std::string actual = file_checksum(dir + "/" + file);
    if (actual != recorded)
      throw std::runtime_error(
          "manifest: artifact '" + file + "' produced by stage '" + stage +
          "' has checksum " + actual + " but the manifest records " + recorded +
          "; rerun stage '" + stage + "' and everything downstream of it");
  }

  std::string output_checksum(const std::string& file) const {
    return producer_of(file).second;
  }
};

}  // namespace ivmc::harness
