#pragma once

#include <cstdint>
#include <vector>

#include "recon/camera.hpp"
#include "recon/mapping.hpp"
#include "recon/rng.hpp"

namespace recon {

struct SampleBatch {
    std::vector<uint32_t> indices;  // into the database record store
    int from_current = 0;
    int from_db = 0;
    int active_selected = 0;

    size_t size() const { return indices.size(); }
};

// Append-only observation database: rays sampled from keyframes (valid-depth
// pixels first, padded with invalid-depth pixels when a frame has too few).
class KeyframeDB {
public:
    explicit KeyframeDB(uint64_t seed, int pixels_per_keyframe = 2048)
        : rng_(seed, /*stream=*/3), pixels_per_keyframe_(pixels_per_keyframe) {}

    // Back-projects a random pixel subset of `frame` into world-frame rays
    // and appends them tagged with the keyframe index. Pixel z-depth is
    // converted to ray-length depth here.
    void insert_keyframe(const RGBDFrame& frame, const PinholeCamera& camera, int step);

    // N rays: at least `min_current` uniformly from the latest keyframe's
    // records, remainder uniformly from the whole database.
    SampleBatch sample_random(int n, int min_current = 100);

    // Mixed strategy: a 4x candidate pool is scored by rendered sigma^2
    // through `map`; the top-n_active candidates are kept and the rest of the
    // batch is filled with uniform draws. Falls back to sample_random (with a
    // warning flag) when the database is smaller than the batch.
    SampleBatch sample_active(const MapModel& map, const SamplingConfig& sampling, int n,
                              int n_active, int min_current = 100, bool* fell_back = nullptr);

    size_t size() const { return records_.size(); }
    int num_keyframes() const { return static_cast<int>(kf_ranges_.size()); }
    const RaySample& record(size_t i) const { return records_[i]; }
    const std::vector<RaySample>& records() const { return records_; }
    Rng& rng() { return rng_; }

private:
    std::vector<RaySample> records_;
    std::vector<std::pair<uint32_t, uint32_t>> kf_ranges_;  // [begin, end) per keyframe
    std::vector<int> kf_steps_;
    Rng rng_;
    int pixels_per_keyframe_;

    uint32_t draw_db() { return static_cast<uint32_t>(rng_.uniform_index(records_.size())); }
    uint32_t draw_current();
};

}  // namespace recon
