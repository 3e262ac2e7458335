#include "recon/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "recon/keyframe_db.hpp"

namespace recon {

namespace {

// Exit distance of a ray from an AABB (origin assumed inside or near it).
double aabb_exit(const Aabb& b, const Vec3& o, const Vec3& d) {
    double t_exit = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        double da = (&d.x)[a];
        if (std::fabs(da) < 1e-12) continue;
        double t1 = ((&b.min.x)[a] - (&o.x)[a]) / da;
        double t2 = ((&b.max.x)[a] - (&o.x)[a]) / da;
        t_exit = std::min(t_exit, std::max(t1, t2));
    }
    return t_exit;
}

}  // namespace

RayPoints sample_along_ray(const RaySample& ray, const Aabb& bounds, const SamplingConfig& cfg,
                           double trunc, Rng& rng) {
    RayPoints pts;
    pts.origin = ray.origin;
    pts.dir = ray.dir;
    pts.depth_obs = ray.depth_obs;

    double t_lo = cfg.near;
    double t_hi = std::min(cfg.far, aabb_exit(bounds, ray.origin, ray.dir));
    if (t_hi < t_lo + 0.01) t_hi = t_lo + 0.01;

    pts.depths.reserve(cfg.n_stratified + cfg.n_surface);
    double span = (t_hi - t_lo) / cfg.n_stratified;
    for (int i = 0; i < cfg.n_stratified; ++i)
        pts.depths.push_back(t_lo + (i + rng.uniform()) * span);

    if (ray.has_depth()) {
        double lo = std::max(1e-2, ray.depth_obs - trunc);
        double hi = ray.depth_obs + trunc;
        for (int i = 0; i < cfg.n_surface; ++i)
            pts.depths.push_back(cfg.n_surface == 1 ? ray.depth_obs
                                                    : lo + (hi - lo) * i / (cfg.n_surface - 1));
        std::sort(pts.depths.begin(), pts.depths.end());
    }

    pts.region.resize(pts.depths.size(), PointRegion::Excluded);
    if (ray.has_depth()) {
        for (size_t i = 0; i < pts.depths.size(); ++i) {
            double d = pts.depths[i];
            if (std::fabs(d - ray.depth_obs) <= trunc) {
                pts.region[i] = PointRegion::Truncation;
                ++pts.n_trunc;
            } else if (d < ray.depth_obs - trunc) {
                pts.region[i] = PointRegion::FreeSpace;
                ++pts.n_free;
            }
        }
    }
    return pts;
}

double depth_loss_term(double d_hat, double depth_obs, double sigma2_hat, double floor) {
    double s2 = std::max(sigma2_hat, floor);
    double r = d_hat - depth_obs;
    return r * r / (2.0 * s2) + 0.5 * std::log(s2);
}

RenderOutput render_from_samples(const double* s, const Vec3* c, const double* sigma2,
                                 const double* depths, size_t n, double trunc) {
    RenderOutput out;
    out.weights.resize(n);
    double wsum = 0.0;
    Vec3 csum{0, 0, 0};
    double dsum = 0.0, ssum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double z = s[i] / trunc;
        double w = sigmoid(z) * sigmoid(-z);
        out.weights[i] = w;
        wsum += w;
        if (c) csum += w * c[i];
        dsum += w * depths[i];
        if (sigma2) ssum += w * sigma2[i];
    }
    out.weight_sum = wsum;
    out.valid = wsum >= 1e-8;
    if (out.valid) {
        if (c) out.color = csum / wsum;
        out.depth = dsum / wsum;
        if (sigma2) out.sigma2 = ssum / wsum;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-ray forward/backward machinery
// ---------------------------------------------------------------------------

namespace {

// Per-thread scratch sized for one ray.
struct RayScratch {
    std::vector<double> in_buf;
    std::vector<double> geo_acts;
    std::vector<double> color_acts;
    std::vector<double> unet_acts;
    std::vector<GridCorners> corners;
    std::vector<UVertexFootprint> ufps;
    std::vector<double> s, w, u_pre, sig2, depths_buf;
    std::vector<Vec3> c;
    std::vector<double> bwd_scratch, d_out, d_in, d_h;
    size_t pts_cap = 0;

    void ensure(const MapModel& map, size_t max_pts) {
        const auto& lo = map.layout;
        const size_t geo_as = lo.geo.act_size();
        const size_t col_as = lo.color.act_size();
        const size_t unet_as = lo.has_unet ? lo.unet.act_size() : 0;
        const int gd = map.cfg.gamma_dim(), vd = map.cfg.valpha_dim();
        const int max_in = std::max(lo.geo.in_dim, lo.color.in_dim);
        auto grow = [](auto& buf, size_t n) {
            if (buf.size() < n) buf.resize(n);
        };
        grow(in_buf, static_cast<size_t>(std::max(gd + vd, gd + map.cfg.h_dim)));
        grow(geo_acts, max_pts * geo_as);
        grow(color_acts, max_pts * col_as);
        if (lo.has_unet) grow(unet_acts, max_pts * unet_as);
        grow(corners, max_pts * map.cfg.levels);
        grow(ufps, max_pts);
        grow(s, max_pts);
        grow(w, max_pts);
        grow(u_pre, max_pts);
        grow(sig2, max_pts);
        grow(c, max_pts);
        grow(bwd_scratch, 2 * static_cast<size_t>(std::max(map.cfg.mlp_width, max_in)));
        grow(d_out, static_cast<size_t>(std::max({lo.geo.out_dim, lo.color.out_dim, 1})));
        grow(d_in, static_cast<size_t>(max_in));
        grow(d_h, static_cast<size_t>(map.cfg.h_dim));
        pts_cap = std::max(pts_cap, max_pts);
    }
};

struct RayNormalizers {
    double inv_3n = 0.0;   // 1 / (3 N)
    double inv_rd = 0.0;   // 1 / |R_d| (0 when no valid-depth rays)
};

struct RayLossAcc {
    double c = 0.0, d = 0.0, sdf = 0.0, fs = 0.0;
};

// Forward pass for one ray; fills scratch with everything backward needs.
// need_color/need_sigma gate the second stage (only when the render is valid).
RenderOutput forward_ray(const MapModel& map, const RayPoints& pts, RayScratch& ws,
                         bool need_color, bool need_sigma) {
    const auto& lo = map.layout;
    const MapConfig& cfg = map.cfg;
    const size_t n = pts.size();
    ws.ensure(map, std::max<size_t>(n, 64));
    const int gd = cfg.gamma_dim(), vd = cfg.valpha_dim();
    const size_t geo_as = lo.geo.act_size();
    const double tr = cfg.trunc;

    double wsum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        Vec3 x = pts.point(i);
        double* in = ws.in_buf.data();
        one_blob_encode(x, cfg, in);
        grid_features(map, x, in + gd, &ws.corners[i * cfg.levels]);
        double* act = &ws.geo_acts[i * geo_as];
        lo.geo.forward(map.params.data(), in, act);
        double s = act[geo_as - lo.geo.out_dim];
        ws.s[i] = s;
        double z = s / tr;
        double w = sigmoid(z) * sigmoid(-z);
        ws.w[i] = w;
        wsum += w;
        ws.ufps[i] = ugrid_footprint(lo.ugrid, x);
    }

    RenderOutput out;
    out.weight_sum = wsum;
    out.valid = wsum >= 1e-8;
    if (!out.valid) return out;

    Vec3 csum{0, 0, 0};
    double dsum = 0.0, ssum = 0.0;
    const size_t col_as = lo.color.act_size();
    const size_t unet_as = lo.has_unet ? lo.unet.act_size() : 0;
    const float* uraw = map.uraw();
    for (size_t i = 0; i < n; ++i) {
        const double* act = &ws.geo_acts[i * geo_as];
        const double* gamma = act;  // first gd entries of the act buffer
        const double* h = act + geo_as - lo.geo.out_dim + 1;
        if (need_color) {
            double* in = ws.in_buf.data();
            for (int k = 0; k < gd; ++k) in[k] = gamma[k];
            for (int k = 0; k < cfg.h_dim; ++k) in[gd + k] = h[k];
            double* cact = &ws.color_acts[i * col_as];
            lo.color.forward(map.params.data(), in, cact);
            const double* craw = cact + col_as - 3;
            ws.c[i] = {sigmoid(craw[0]), sigmoid(craw[1]), sigmoid(craw[2])};
            csum += ws.w[i] * ws.c[i];
        }
        if (need_sigma) {
            double pre;
            if (cfg.uncertainty_mode == UncertaintyMode::Grid) {
                const UVertexFootprint& fp = ws.ufps[i];
                pre = 0.0;
                for (int k = 0; k < 8; ++k)
                    pre += fp.weights[k] * static_cast<double>(uraw[fp.idx[k]]);
            } else {
                double* in = ws.in_buf.data();
                for (int k = 0; k < gd; ++k) in[k] = gamma[k];
                for (int k = 0; k < cfg.h_dim; ++k) in[gd + k] = h[k];
                double* uact = &ws.unet_acts[i * unet_as];
                lo.unet.forward(map.params.data(), in, uact);
                pre = uact[unet_as - 1];
            }
            ws.u_pre[i] = pre;
            ws.sig2[i] = softplus(pre);
            ssum += ws.w[i] * ws.sig2[i];
        }
        dsum += ws.w[i] * pts.depths[i];
    }
    out.color = csum / wsum;
    out.depth = dsum / wsum;
    out.sigma2 = ssum / wsum;
    return out;
}

// Loss terms and analytic gradient accumulation for one ray.
void ray_losses_backward(const MapModel& map, const RaySample& ray, const RayPoints& pts,
                         const RenderOutput& out, const BaConfig& cfg,
                         const RayNormalizers& norm, RayScratch& ws, RayLossAcc& acc,
                         double* grad) {
    const auto& lo = map.layout;
    const MapConfig& mc = map.cfg;
    const size_t n = pts.size();
    const int gd = mc.gamma_dim();
    const size_t geo_as = lo.geo.act_size();
    const size_t col_as = lo.color.act_size();
    const size_t unet_as = lo.has_unet ? lo.unet.act_size() : 0;
    const double tr = mc.trunc;
    const LossWeights& lw = cfg.weights;

    // --- loss values ---
    Vec3 g_chat{0, 0, 0};
    double g_dhat = 0.0, g_s2hat = 0.0;
    bool color_active = out.valid;
    bool depth_active = out.valid && ray.has_depth();
    if (color_active) {
        Vec3 e = out.color - ray.color_obs;
        acc.c += (e.x * e.x + e.y * e.y + e.z * e.z) * norm.inv_3n;
        g_chat = 2.0 * norm.inv_3n * lw.c * e;
    }
    if (depth_active) {
        double rd = out.depth - ray.depth_obs;
        double s2 = std::max(out.sigma2, cfg.sigma2_floor);
        acc.d += depth_loss_term(out.depth, ray.depth_obs, out.sigma2, cfg.sigma2_floor) *
                 norm.inv_rd;
        g_dhat = lw.d * norm.inv_rd * rd / s2;
        if (out.sigma2 > cfg.sigma2_floor)
            g_s2hat = lw.d * norm.inv_rd * (0.5 / s2 - rd * rd / (2.0 * s2 * s2));
    }

    double sdf_term = 0.0, fs_term = 0.0;
    if (ray.has_depth()) {
        for (size_t i = 0; i < n; ++i) {
            double target;
            if (pts.region[i] == PointRegion::Truncation)
                target = ray.depth_obs - pts.depths[i];
            else if (pts.region[i] == PointRegion::FreeSpace)
                target = tr;
            else
                continue;
            double e = ws.s[i] - target;
            if (pts.region[i] == PointRegion::Truncation)
                sdf_term += e * e;
            else
                fs_term += e * e;
        }
        if (pts.n_trunc > 0) acc.sdf += sdf_term / pts.n_trunc * norm.inv_rd;
        if (pts.n_free > 0) acc.fs += fs_term / pts.n_free * norm.inv_rd;
    }

    if (!grad) return;

    // --- backward ---
    const double inv_w = out.valid ? 1.0 / out.weight_sum : 0.0;
    const bool grid_sigma = mc.uncertainty_mode == UncertaintyMode::Grid;
    for (size_t i = 0; i < n; ++i) {
        double g_s = 0.0;
        double g_w = 0.0;
        const double w = ws.w[i];

        if (color_active) {
            const Vec3& ci = ws.c[i];
            g_w += (g_chat.x * (ci.x - out.color.x) + g_chat.y * (ci.y - out.color.y) +
                    g_chat.z * (ci.z - out.color.z)) *
                   inv_w;
            // d(color loss)/d(c_i) through the normalized sum, then logistic.
            double* dcr = ws.d_out.data();
            dcr[0] = g_chat.x * w * inv_w * ci.x * (1.0 - ci.x);
            dcr[1] = g_chat.y * w * inv_w * ci.y * (1.0 - ci.y);
            dcr[2] = g_chat.z * w * inv_w * ci.z * (1.0 - ci.z);
            if (dcr[0] != 0.0 || dcr[1] != 0.0 || dcr[2] != 0.0) {
                lo.color.backward(map.params.data(), &ws.color_acts[i * col_as], dcr, grad,
                                  ws.d_in.data(), ws.bwd_scratch.data());
                for (int k = 0; k < mc.h_dim; ++k) ws.d_h[k] = ws.d_in[gd + k];
            } else {
                std::fill(ws.d_h.begin(), ws.d_h.end(), 0.0);
            }
        } else {
            std::fill(ws.d_h.begin(), ws.d_h.end(), 0.0);
        }

        if (depth_active) {
            g_w += g_dhat * (pts.depths[i] - out.depth) * inv_w;
            if (g_s2hat != 0.0) {
                g_w += g_s2hat * (ws.sig2[i] - out.sigma2) * inv_w;
                double g_sig2_i = g_s2hat * w * inv_w;
                double dpre = g_sig2_i * sigmoid(ws.u_pre[i]);
                if (grid_sigma) {
                    const UVertexFootprint& fp = ws.ufps[i];
                    double* guraw = grad + lo.uraw_offset;
                    for (int k = 0; k < 8; ++k) guraw[fp.idx[k]] += dpre * fp.weights[k];
                } else {
                    ws.d_out[0] = dpre;
                    lo.unet.backward(map.params.data(), &ws.unet_acts[i * unet_as],
                                     ws.d_out.data(), grad, ws.d_in.data(), ws.bwd_scratch.data());
                    for (int k = 0; k < mc.h_dim; ++k) ws.d_h[k] += ws.d_in[gd + k];
                }
            }
        }

        // w_i = sigmoid(s/tr) sigmoid(-s/tr): dw/ds = w (1 - 2 sigmoid(s/tr)) / tr
        if (g_w != 0.0) g_s += g_w * w * (1.0 - 2.0 * sigmoid(ws.s[i] / tr)) / tr;

        if (ray.has_depth()) {
            if (pts.region[i] == PointRegion::Truncation && pts.n_trunc > 0) {
                double e = ws.s[i] - (ray.depth_obs - pts.depths[i]);
                g_s += lw.sdf * norm.inv_rd * 2.0 * e / pts.n_trunc;
            } else if (pts.region[i] == PointRegion::FreeSpace && pts.n_free > 0) {
                double e = ws.s[i] - tr;
                g_s += lw.fs * norm.inv_rd * 2.0 * e / pts.n_free;
            }
        }

        bool h_zero = true;
        for (int k = 0; k < mc.h_dim; ++k)
            if (ws.d_h[k] != 0.0) {
                h_zero = false;
                break;
            }
        if (g_s == 0.0 && h_zero) continue;

        double* dgo = ws.d_out.data();
        dgo[0] = g_s;
        for (int k = 0; k < mc.h_dim; ++k) dgo[1 + k] = ws.d_h[k];
        lo.geo.backward(map.params.data(), &ws.geo_acts[i * geo_as], dgo, grad, ws.d_in.data(),
                        ws.bwd_scratch.data());
        // V_alpha slice of the input gradient flows into the hash tables.
        const double* d_va = ws.d_in.data() + gd;
        const int F = mc.feats_per_level;
        for (int l = 0; l < mc.levels; ++l) {
            const GridCorners& cr = ws.corners[i * mc.levels + l];
            double* gtab = grad + lo.grid_level_offset[l];
            for (int cnr = 0; cnr < 8; ++cnr) {
                double cw = cr.weights[cnr];
                if (cw == 0.0) continue;
                double* grow = gtab + static_cast<size_t>(cr.rows[cnr]) * F;
                for (int f = 0; f < F; ++f) grow[f] += cw * d_va[l * F + f];
            }
        }
    }
}

}  // namespace

RenderOutput render_ray(const MapModel& map, const RayPoints& points) {
    if (points.size() == 0) throw std::invalid_argument("render_ray: need at least one point");
    thread_local RayScratch ws;
    RenderOutput out = forward_ray(map, points, ws, /*need_color=*/true, /*need_sigma=*/true);
    out.weights.assign(ws.w.begin(), ws.w.begin() + points.size());
    return out;
}

double score_ray_sigma2(const MapModel& map, const RayPoints& points) {
    thread_local RayScratch ws;
    RenderOutput out = forward_ray(map, points, ws, /*need_color=*/false, /*need_sigma=*/true);
    return out.valid ? out.sigma2 : 0.0;
}

// ---------------------------------------------------------------------------
// Batched loss with deterministic chunked gradient accumulation
// ---------------------------------------------------------------------------

class BaWorkspace {
public:
    std::vector<std::vector<double>> chunk_grads;
    std::vector<RayScratch> chunk_scratch;
    std::vector<std::vector<size_t>> chunk_touched;

    void ensure(size_t chunks, size_t params) {
        chunk_grads.resize(chunks);
        chunk_scratch.resize(chunks);
        chunk_touched.resize(chunks);
        for (auto& g : chunk_grads) g.assign(params, 0.0);
        for (auto& t : chunk_touched) t.clear();
    }
};

LossBreakdown compute_losses(const MapModel& map, const std::vector<RaySample>& batch,
                             const std::vector<RayPoints>& points, const BaConfig& cfg,
                             const std::vector<std::array<int, 3>>& smooth_vertices, double* grad,
                             std::vector<size_t>* touched_uvertices, BaWorkspace* ws) {
    if (batch.empty()) throw std::invalid_argument("compute_losses: empty batch");
    if (points.size() != batch.size())
        throw std::invalid_argument("compute_losses: points/batch size mismatch");

    const size_t n_rays = batch.size();
    RayNormalizers norm;
    norm.inv_3n = 1.0 / (3.0 * n_rays);
    size_t n_rd = 0;
    for (const auto& r : batch)
        if (r.has_depth()) ++n_rd;
    norm.inv_rd = n_rd > 0 ? 1.0 / static_cast<double>(n_rd) : 0.0;

    const int chunks = std::max(1, cfg.grad_chunks);
    BaWorkspace local_ws;
    BaWorkspace& work = ws ? *ws : local_ws;
    const size_t grad_len = grad ? map.layout.total : 0;
    work.ensure(chunks, grad_len);

    std::vector<RayLossAcc> chunk_acc(chunks);

#pragma omp parallel for schedule(dynamic, 1)
    for (int ch = 0; ch < chunks; ++ch) {
        size_t lo_i = n_rays * ch / chunks;
        size_t hi_i = n_rays * (ch + 1) / chunks;
        RayScratch& scratch = work.chunk_scratch[ch];
        double* gbuf = grad ? work.chunk_grads[ch].data() : nullptr;
        for (size_t i = lo_i; i < hi_i; ++i) {
            const RaySample& ray = batch[i];
            const RayPoints& pts = points[i];
            RenderOutput out = forward_ray(map, pts, scratch, /*need_color=*/true,
                                           /*need_sigma=*/true);
            ray_losses_backward(map, ray, pts, out, cfg, norm, scratch, chunk_acc[ch], gbuf);
            if (touched_uvertices && ray.has_depth()) {
                for (size_t p = 0; p < pts.size(); ++p) {
                    if (pts.region[p] == PointRegion::Excluded) continue;
                    for (int k = 0; k < 8; ++k)
                        work.chunk_touched[ch].push_back(scratch.ufps[p].idx[k]);
                }
            }
        }
    }

    LossBreakdown losses;
    losses.weights = cfg.weights;
    for (int ch = 0; ch < chunks; ++ch) {
        losses.l_c += chunk_acc[ch].c;
        losses.l_d += chunk_acc[ch].d;
        losses.l_sdf += chunk_acc[ch].sdf;
        losses.l_fs += chunk_acc[ch].fs;
    }
    if (grad) {
        double* total_grad = grad;
        for (int ch = 0; ch < chunks; ++ch) {
            const double* g = work.chunk_grads[ch].data();
#pragma omp parallel for schedule(static)
            for (int64_t k = 0; k < static_cast<int64_t>(grad_len); ++k) total_grad[k] += g[k];
        }
    }
    if (touched_uvertices)
        for (int ch = 0; ch < chunks; ++ch)
            touched_uvertices->insert(touched_uvertices->end(), work.chunk_touched[ch].begin(),
                                      work.chunk_touched[ch].end());

    // Feature smoothness over sampled coarse-grid vertices.
    if (!smooth_vertices.empty()) {
        const MapConfig& mc = map.cfg;
        const int F = mc.feats_per_level;
        const int vd = mc.valpha_dim();
        const Vec3 ext = mc.bounds.extent();
        const Vec3 eps = ext / mc.res_min;  // one coarsest-level cell
        std::vector<double> va0(vd), va1(vd);
        std::vector<GridCorners> cr0(mc.levels), cr1(mc.levels);
        double sm = 0.0;
        const double scale = 1.0 / smooth_vertices.size();
        for (const auto& v : smooth_vertices) {
            Vec3 x = mc.bounds.min + Vec3{v[0] * ext.x / mc.res_min, v[1] * ext.y / mc.res_min,
                                          v[2] * ext.z / mc.res_min};
            grid_features(map, x, va0.data(), &cr0[0]);
            for (int axis = 0; axis < 3; ++axis) {
                Vec3 xe = x;
                (&xe.x)[axis] += (&eps.x)[axis];
                grid_features(map, xe, va1.data(), &cr1[0]);
                for (int k = 0; k < vd; ++k) {
                    double diff = va1[k] - va0[k];
                    sm += diff * diff * scale;
                    if (grad) {
                        double gd2 = cfg.weights.smooth * 2.0 * diff * scale;
                        int l = k / F, f = k % F;
                        double* gtab = grad + map.layout.grid_level_offset[l];
                        for (int cnr = 0; cnr < 8; ++cnr) {
                            gtab[static_cast<size_t>(cr1[l].rows[cnr]) * F + f] +=
                                gd2 * cr1[l].weights[cnr];
                            gtab[static_cast<size_t>(cr0[l].rows[cnr]) * F + f] -=
                                gd2 * cr0[l].weights[cnr];
                        }
                    }
                }
            }
        }
        losses.l_smooth = sm;
    }

    losses.finish();
    return losses;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

OptimState init_optim(const MapModel& map, const AdamConfig& cfg) {
    OptimState st;
    st.cfg = cfg;
    st.m.assign(map.layout.total, 0.0f);
    st.v.assign(map.layout.total, 0.0f);
    st.step = 0;
    return st;
}

void adam_step(MapModel& map, OptimState& optim, const double* grad) {
    if (optim.m.size() != map.params.size())
        throw std::invalid_argument("adam_step: optimizer state does not match model");
    ++optim.step;
    const double b1 = optim.cfg.beta1, b2 = optim.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(optim.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(optim.step));
    const size_t grid_end = map.layout.grid_level_offset.back();
    const size_t dec_end = map.layout.uraw_offset;
    const size_t total = map.layout.total;

    auto update_range = [&](size_t lo, size_t hi, double lr) {
#pragma omp parallel for schedule(static)
        for (int64_t i = static_cast<int64_t>(lo); i < static_cast<int64_t>(hi); ++i) {
            double g = grad[i];
            double m = b1 * optim.m[i] + (1.0 - b1) * g;
            double v = b2 * optim.v[i] + (1.0 - b2) * g * g;
            optim.m[i] = static_cast<float>(m);
            optim.v[i] = static_cast<float>(v);
            double mh = m / bc1;
            double vh = v / bc2;
            map.params[i] = static_cast<float>(map.params[i] - lr * mh / (std::sqrt(vh) + optim.cfg.eps));
        }
    };
    update_range(0, grid_end, optim.cfg.lr_grid);
    update_range(grid_end, dec_end, optim.cfg.lr_decoder);
    update_range(dec_end, total, optim.cfg.lr_sigma_raw);
}

// ---------------------------------------------------------------------------
// Bundle adjustment
// ---------------------------------------------------------------------------

BaResult ba_step(MapModel& map, KeyframeDB& db, SamplerMode mode, OptimState& optim,
                 const BaConfig& cfg, Rng& rng) {
    if (db.size() == 0) throw std::invalid_argument("ba_step: database is empty");
    BaResult result;
    BaWorkspace ws;
    std::vector<double> grad(map.layout.total);
    std::vector<size_t> touched;
    std::vector<RaySample> batch(cfg.batch_size);
    std::vector<RayPoints> points(cfg.batch_size);
    std::vector<std::array<int, 3>> smooth_vertices(cfg.smooth_samples);

    for (int iter = 0; iter < cfg.n_iters; ++iter) {
        SampleBatch sb;
        if (mode == SamplerMode::Mixed) {
            bool fell_back = false;
            sb = db.sample_active(map, cfg.sampling, cfg.batch_size, 500, cfg.min_current,
                                  &fell_back);
            if (fell_back)
                result.events.push_back({iter, "active sampling pool too small; random fallback"});
        } else {
            sb = db.sample_random(cfg.batch_size, cfg.min_current);
        }
        result.from_current = sb.from_current;
        result.from_db = sb.from_db;
        result.active_selected = sb.active_selected;

        uint64_t iter_seed = rng.next_u64();
        for (int i = 0; i < cfg.batch_size; ++i) batch[i] = db.record(sb.indices[i]);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < cfg.batch_size; ++i) {
            Rng ray_rng(iter_seed, static_cast<uint64_t>(i));
            points[i] = sample_along_ray(batch[i], map.cfg.bounds, cfg.sampling, map.cfg.trunc,
                                         ray_rng);
        }
        for (auto& v : smooth_vertices)
            for (int a = 0; a < 3; ++a)
                v[a] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(map.cfg.res_min)));

        std::fill(grad.begin(), grad.end(), 0.0);
        touched.clear();
        LossBreakdown losses =
            compute_losses(map, batch, points, cfg, smooth_vertices, grad.data(), &touched, &ws);

        if (!std::isfinite(losses.total)) {
            const char* group = "unknown";
            for (size_t k = 0; k < grad.size(); ++k) {
                if (!std::isfinite(grad[k])) {
                    int g = map.layout.group_of(k);
                    group = g == ParamLayout::GroupGrid ? "hash-grid"
                            : g == ParamLayout::GroupDecoders ? "decoders" : "sigma-raw";
                    break;
                }
            }
            throw std::runtime_error("ba_step: non-finite loss at iteration " +
                                     std::to_string(iter) + " (parameter group: " + group + ")");
        }

        adam_step(map, optim, grad.data());
        for (size_t idx : touched) map.observed[idx] = 1;
        result.history.push_back(losses);
    }
    return result;
}

}  // namespace recon
