#pragma once

#include <string>

#include <json.hpp>

#include "atres/training.hpp"

namespace atres::io {

// Deterministic part of an epoch record; wall_time goes to a separate
// timing file so that identical runs give identical logs.
inline nlohmann::ordered_json epoch_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train_loss"] = r.train_loss;
  j["train_dice"] = r.train_dice;
  j["val_dice"] = r.val_dice ? nlohmann::ordered_json(*r.val_dice) : nlohmann::ordered_json(nullptr);
  return j;
}

inline std::string epoch_line(const EpochRecord& r) { return epoch_json(r).dump() + "\n"; }

inline std::string timing_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["wall_time"] = r.wall_time;
  return j.dump() + "\n";
}

inline std::string format_log(const std::vector<EpochRecord>& h) {
  std::string s;
  for (const auto& r : h) s += epoch_line(r);
  return s;
}

}  // namespace atres::io
