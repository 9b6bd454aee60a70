#pragma once

#include "posekit/body_model.hpp"

#include <cstdint>
#include <string>

namespace posekit {

// Versioned JSON model document. Keys are sorted on write, so serialization
// is canonical and the hash below is stable.
std::string model_to_json(const KinematicModel& model);
KinematicModel model_from_json(const std::string& text);

void save_model(const KinematicModel& model, const std::string& path);
KinematicModel load_model(const std::string& path);

// Hash of the canonical serialization; datasets record it so a checkpoint can
// be traced back to the exact model it was trained against.
std::uint64_t model_hash(const KinematicModel& model);

}  // namespace posekit
