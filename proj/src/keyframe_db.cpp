#include "recon/keyframe_db.hpp"

#include <algorithm>
#include <stdexcept>

namespace recon {

void KeyframeDB::insert_keyframe(const RGBDFrame& frame, const PinholeCamera& camera, int step) {
    const uint32_t n_pixels = static_cast<uint32_t>(frame.width) * frame.height;
    std::vector<uint32_t> valid, invalid;
    valid.reserve(n_pixels);
    for (uint32_t p = 0; p < n_pixels; ++p)
        (frame.depth[p] > 0.0f ? valid : invalid).push_back(p);

    // Valid-depth pixels first; pad with invalid ones only when short.
    const uint32_t want = static_cast<uint32_t>(pixels_per_keyframe_);
    std::vector<uint32_t> chosen;
    chosen.reserve(want);
    {
        auto pick = rng_.sample_indices(static_cast<uint32_t>(valid.size()),
                                        std::min<uint32_t>(want, valid.size()));
        for (uint32_t i : pick) chosen.push_back(valid[i]);
    }
    if (chosen.size() < want) {
        auto pick = rng_.sample_indices(static_cast<uint32_t>(invalid.size()),
                                        std::min<uint32_t>(want - chosen.size(), invalid.size()));
        for (uint32_t i : pick) chosen.push_back(invalid[i]);
    }

    const int kf_index = static_cast<int>(kf_ranges_.size());
    uint32_t begin = static_cast<uint32_t>(records_.size());
    for (uint32_t p : chosen) {
        int u = p % frame.width, v = p / frame.width;
        Vec3 r_cam = camera.pixel_ray(u, v);
        RaySample s;
        s.origin = frame.pose.pos;
        s.dir = frame.pose.rot.rotate(r_cam);
        const float* col = frame.color_at(u, v);
        s.color_obs = {col[0], col[1], col[2]};
        float z = frame.depth_at(u, v);
        s.depth_obs = z > 0.0f ? static_cast<double>(z) / r_cam.z : 0.0;  // z-depth -> ray length
        s.frame_id = kf_index;
        records_.push_back(s);
    }
    kf_ranges_.emplace_back(begin, static_cast<uint32_t>(records_.size()));
    kf_steps_.push_back(step);
}

uint32_t KeyframeDB::draw_current() {
    auto [begin, end] = kf_ranges_.back();
    return begin + static_cast<uint32_t>(rng_.uniform_index(end - begin));
}

SampleBatch KeyframeDB::sample_random(int n, int min_current) {
    if (records_.empty()) throw std::invalid_argument("sample_random: database is empty");
    if (n < min_current) throw std::invalid_argument("sample_random: N below the current-frame minimum");
    SampleBatch batch;
    batch.indices.reserve(n);
    for (int i = 0; i < min_current; ++i) batch.indices.push_back(draw_current());
    for (int i = min_current; i < n; ++i) batch.indices.push_back(draw_db());
    batch.from_current = min_current;
    batch.from_db = n - min_current;
    return batch;
}

SampleBatch KeyframeDB::sample_active(const MapModel& map, const SamplingConfig& sampling, int n,
                                      int n_active, int min_current, bool* fell_back) {
    if (fell_back) *fell_back = false;
    if (n_active <= 0) return sample_random(n, min_current);
    if (records_.size() < static_cast<size_t>(n)) {
        if (fell_back) *fell_back = true;
        return sample_random(n, min_current);
    }
    if (n_active + min_current > n)
        throw std::invalid_argument("sample_active: N' + current minimum exceeds N");

    // Candidate pool: 4x the random draw sizes.
    const int pool_db = 4 * (n - min_current);
    const int pool_cur = 4 * min_current;
    std::vector<uint32_t> pool;
    pool.reserve(pool_db + pool_cur);
    for (int i = 0; i < pool_db; ++i) pool.push_back(draw_db());
    for (int i = 0; i < pool_cur; ++i) pool.push_back(draw_current());

    const uint64_t score_seed = rng_.next_u64();
    std::vector<double> scores(pool.size());
#pragma omp parallel for schedule(dynamic, 64)
    for (int64_t i = 0; i < static_cast<int64_t>(pool.size()); ++i) {
        Rng ray_rng(score_seed, static_cast<uint64_t>(i));
        RayPoints pts = sample_along_ray(records_[pool[i]], map.cfg.bounds, sampling,
                                         map.cfg.trunc, ray_rng);
        scores[i] = score_ray_sigma2(map, pts);
    }

    // Top-N' by score, ties broken by candidate (pool) index.
    std::vector<uint32_t> order(pool.size());
    for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    std::nth_element(order.begin(), order.begin() + n_active, order.end(),
                     [&](uint32_t a, uint32_t b) {
                         if (scores[a] != scores[b]) return scores[a] > scores[b];
                         return a < b;
                     });
    std::sort(order.begin(), order.begin() + n_active, [&](uint32_t a, uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    SampleBatch batch;
    batch.indices.reserve(n);
    for (int i = 0; i < n_active; ++i) batch.indices.push_back(pool[order[i]]);
    for (int i = 0; i < min_current; ++i) batch.indices.push_back(draw_current());
    int fill_db = n - n_active - min_current;
    for (int i = 0; i < fill_db; ++i) batch.indices.push_back(draw_db());
    batch.active_selected = n_active;
    batch.from_current = min_current;
    batch.from_db = fill_db;
    return batch;
}

}  // namespace recon
