#pragma once

#include "posekit/body_model.hpp"

#include <string>

namespace posekit {

// Wavefront OBJ: one `v x y z` line per vertex (meters, 6 decimals) followed
// by one 1-based `f` line per triangle.
void export_obj(const KinematicModel& model, const PoseState& state, const std::string& path);

}  // namespace posekit
