#pragma once

#include <string>

#include "recon/map_model.hpp"
#include "recon/mapping.hpp"

namespace recon {

// Single-file checkpoint: magic + JSON manifest (format version, config,
// array dims, little-endian byte order) followed by raw 32-bit float arrays
// in the canonical flat ordering, then the observed/unreachable masks.
void save_checkpoint(const MapModel& map, const OptimState& optim, const std::string& path);

struct Checkpoint {
    MapModel map;
    OptimState optim;
};

// Validates the manifest against the reconstructed layout; rejects dimension
// mismatches (naming the array) and truncated files without partial loads.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace recon
