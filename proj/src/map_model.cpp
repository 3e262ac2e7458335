#include "recon/map_model.hpp"

#include <cmath>
#include <stdexcept>

#include "recon/rng.hpp"

namespace recon {

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

void MapConfig::validate() const {
    if (!(bounds.min.x < bounds.max.x && bounds.min.y < bounds.max.y && bounds.min.z < bounds.max.z))
        throw std::invalid_argument("map config: degenerate bounds");
    if (n_bins < 1) throw std::invalid_argument("map config: n_bins must be >= 1");
    if (levels < 1) throw std::invalid_argument("map config: levels must be >= 1");
    if (feats_per_level < 1) throw std::invalid_argument("map config: feats_per_level must be >= 1");
    if (log2_table < 1 || log2_table > 24)
        throw std::invalid_argument("map config: log2_table out of range");
    if (res_min < 1 || res_max < res_min)
        throw std::invalid_argument("map config: require 1 <= res_min <= res_max");
    if (h_dim < 1 || mlp_width < 1 || mlp_depth < 1)
        throw std::invalid_argument("map config: decoder dims must be positive");
    if (!(trunc > 0.0)) throw std::invalid_argument("map config: trunc must be positive");
    if (!(u_voxel > 0.0)) throw std::invalid_argument("map config: u_voxel must be positive");
}

int MapConfig::grid_resolution(int level) const {
    if (levels == 1) return res_min;
    double b = std::log(static_cast<double>(res_max) / res_min) / (levels - 1);
    return static_cast<int>(std::lround(res_min * std::exp(level * b)));
}

size_t MlpSpec::layer_offset(int l) const {
    size_t off = offset;
    for (int i = 0; i < l; ++i)
        off += static_cast<size_t>(layer_out(i)) * layer_in(i) + layer_out(i);
    return off;
}

size_t MlpSpec::act_size() const {
    size_t n = in_dim;
    for (int l = 0; l < num_layers(); ++l) n += layer_out(l);
    return n;
}

void MlpSpec::forward(const float* params, const double* input, double* act) const {
    for (int i = 0; i < in_dim; ++i) act[i] = input[i];
    const double* in = act;
    double* out = act + in_dim;
    size_t off = offset;
    for (int l = 0; l < num_layers(); ++l) {
        int ni = layer_in(l), no = layer_out(l);
        const float* w = params + off;
        const float* b = params + off + static_cast<size_t>(no) * ni;
        bool relu = l != depth;
        for (int o = 0; o < no; ++o) {
            const float* wr = w + static_cast<size_t>(o) * ni;
            double acc = b[o];
            for (int i = 0; i < ni; ++i) acc += static_cast<double>(wr[i]) * in[i];
            out[o] = relu ? (acc > 0.0 ? acc : 0.0) : acc;
        }
        off += static_cast<size_t>(no) * ni + no;
        in = out;
        out += no;
    }
}

void MlpSpec::backward(const float* params, const double* act, double* d_out, double* grad,
                       double* d_in, double* scratch) const {
    // Walk layers backwards; act holds [input, h0, h1, ..., out].
    const int buf_len = std::max(in_dim, width);
    double* ping = scratch;
    double* pong = scratch + buf_len;
    double* delta = d_out;  // dL/d(layer output), starts at the final output
    // Offset of layer l's input inside act.
    size_t in_off = in_dim;
    for (int l = 0; l < num_layers() - 1; ++l) in_off += layer_out(l);
    // in_off now points at the final output; walk back per layer below.
    for (int l = num_layers() - 1; l >= 0; --l) {
        int ni = layer_in(l), no = layer_out(l);
        in_off -= ni;
        size_t off = layer_offset(l);
        const float* w = params + off;
        const double* in = act + in_off;
        const double* out = act + in_off + ni;
        if (l != depth) {  // hidden layers are ReLU
            for (int o = 0; o < no; ++o)
                if (out[o] <= 0.0) delta[o] = 0.0;
        }
        double* gw = grad + off;
        double* gb = grad + off + static_cast<size_t>(no) * ni;
        for (int o = 0; o < no; ++o) {
            double d = delta[o];
            if (d == 0.0) continue;
            double* gwr = gw + static_cast<size_t>(o) * ni;
            for (int i = 0; i < ni; ++i) gwr[i] += d * in[i];
            gb[o] += d;
        }
        bool need_din = (l > 0) || (d_in != nullptr);
        if (!need_din) break;
        double* dprev = (l > 0) ? ping : d_in;
        for (int i = 0; i < ni; ++i) dprev[i] = 0.0;
        for (int o = 0; o < no; ++o) {
            double d = delta[o];
            if (d == 0.0) continue;
            const float* wr = w + static_cast<size_t>(o) * ni;
            for (int i = 0; i < ni; ++i) dprev[i] += d * static_cast<double>(wr[i]);
        }
        if (l > 0) {
            delta = dprev;
            std::swap(ping, pong);
        }
    }
}

int ParamLayout::group_of(size_t param_index) const {
    if (param_index < grid_level_offset.back()) return GroupGrid;
    if (param_index < uraw_offset) return GroupDecoders;
    return GroupSigmaRaw;
}

ParamLayout make_layout(const MapConfig& cfg) {
    cfg.validate();
    ParamLayout layout;
    size_t off = 0;
    layout.grid_level_offset.resize(cfg.levels + 1);
    size_t level_params = static_cast<size_t>(cfg.table_rows()) * cfg.feats_per_level;
    for (int l = 0; l <= cfg.levels; ++l) layout.grid_level_offset[l] = off + l * level_params;
    off += cfg.levels * level_params;

    layout.geo = MlpSpec{cfg.gamma_dim() + cfg.valpha_dim(), cfg.mlp_width, cfg.mlp_depth,
                         1 + cfg.h_dim, off};
    off += layout.geo.param_count();
    layout.color = MlpSpec{cfg.gamma_dim() + cfg.h_dim, cfg.mlp_width, cfg.mlp_depth, 3, off};
    off += layout.color.param_count();
    layout.has_unet = cfg.uncertainty_mode == UncertaintyMode::Net;
    if (layout.has_unet) {
        layout.unet = MlpSpec{cfg.gamma_dim() + cfg.h_dim, cfg.mlp_width, cfg.mlp_depth, 1, off};
        off += layout.unet.param_count();
    }
    layout.uraw_offset = off;

    Vec3 ext = cfg.bounds.extent();
    layout.ugrid.voxel = cfg.u_voxel;
    layout.ugrid.origin = cfg.bounds.min;
    layout.ugrid.nx = static_cast<int>(std::ceil(ext.x / cfg.u_voxel - 1e-9)) + 1;
    layout.ugrid.ny = static_cast<int>(std::ceil(ext.y / cfg.u_voxel - 1e-9)) + 1;
    layout.ugrid.nz = static_cast<int>(std::ceil(ext.z / cfg.u_voxel - 1e-9)) + 1;
    layout.total = off + layout.ugrid.count();
    return layout;
}

MapModel init_map(const MapConfig& cfg, uint64_t seed) {
    MapModel map;
    map.cfg = cfg;
    map.layout = make_layout(cfg);
    map.params.resize(map.layout.total);
    Rng rng(seed, /*stream=*/17);

    // Hash tables: small uniform noise.
    for (size_t i = 0; i < map.layout.grid_level_offset.back(); ++i)
        map.params[i] = static_cast<float>(rng.uniform(-1e-4, 1e-4));

    // Decoders: Uniform(+-sqrt(6/fan_in)) weights, zero biases, in flat order.
    auto init_mlp = [&](const MlpSpec& mlp) {
        for (int l = 0; l < mlp.num_layers(); ++l) {
            size_t off = mlp.layer_offset(l);
            int ni = mlp.layer_in(l), no = mlp.layer_out(l);
            double a = std::sqrt(6.0 / ni);
            for (size_t i = 0; i < static_cast<size_t>(no) * ni; ++i)
                map.params[off + i] = static_cast<float>(rng.uniform(-a, a));
            for (int i = 0; i < no; ++i) map.params[off + static_cast<size_t>(no) * ni + i] = 0.0f;
        }
    };
    init_mlp(map.layout.geo);
    init_mlp(map.layout.color);
    if (map.layout.has_unet) init_mlp(map.layout.unet);

    for (size_t i = 0; i < map.layout.ugrid.count(); ++i)
        map.params[map.layout.uraw_offset + i] = static_cast<float>(cfg.sigma_raw_init);

    map.observed.assign(map.layout.ugrid.count(), 0);
    map.unreachable.assign(map.layout.ugrid.count(), 0);
    return map;
}

void one_blob_encode(const Vec3& x, const MapConfig& cfg, double* out) {
    const int n = cfg.n_bins;
    const Vec3 ext = cfg.bounds.extent();
    // Gaussian kernel of width sigma = 1/n at centers (i+0.5)/n, evaluated by
    // a multiplicative recurrence: 2 exps per axis instead of n.
    // f_i = exp(-k (u - c_i)^2), k = n^2/2; f_{i+1} = f_i * A * q^(2i+2)
    // with A = exp(n*u) and q = exp(-1/2).
    static const double q = std::exp(-0.5);
    const double q2 = q * q;
    for (int axis = 0; axis < 3; ++axis) {
        double u = ((&x.x)[axis] - (&cfg.bounds.min.x)[axis]) / (&ext.x)[axis];
        u = std::min(1.0, std::max(0.0, u));
        double k = 0.5 * n * n;
        double c0 = 0.5 / n;
        double f = std::exp(-k * (u - c0) * (u - c0));
        double r = std::exp(n * u) * q2;  // ratio f_1/f_0
        double* o = out + axis * n;
        o[0] = f;
        for (int i = 1; i < n; ++i) {
            f *= r;
            r *= q2;
            o[i] = f;
        }
    }
}

namespace {

inline uint32_t spatial_hash(uint32_t ix, uint32_t iy, uint32_t iz, int log2_table) {
    uint32_t h = ix * 2654435761u ^ iy * 805459861u ^ iz * 3674653429u;
    return h & ((1u << log2_table) - 1u);
}

}  // namespace

void grid_features(const MapModel& map, const Vec3& x, double* out, GridCorners* corners) {
    const MapConfig& cfg = map.cfg;
    const Vec3 ext = cfg.bounds.extent();
    double ux = std::min(1.0, std::max(0.0, (x.x - cfg.bounds.min.x) / ext.x));
    double uy = std::min(1.0, std::max(0.0, (x.y - cfg.bounds.min.y) / ext.y));
    double uz = std::min(1.0, std::max(0.0, (x.z - cfg.bounds.min.z) / ext.z));
    const int F = cfg.feats_per_level;
    for (int l = 0; l < cfg.levels; ++l) {
        int res = cfg.grid_resolution(l);
        double px = ux * res, py = uy * res, pz = uz * res;
        int ix = std::min(static_cast<int>(px), res - 1);
        int iy = std::min(static_cast<int>(py), res - 1);
        int iz = std::min(static_cast<int>(pz), res - 1);
        double tx = px - ix, ty = py - iy, tz = pz - iz;
        const float* table = map.grid_level(l);
        double* o = out + static_cast<size_t>(l) * F;
        for (int f = 0; f < F; ++f) o[f] = 0.0;
        GridCorners* cr = corners ? corners + l : nullptr;
        for (int c = 0; c < 8; ++c) {
            int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
            double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
            uint32_t row = spatial_hash(ix + dx, iy + dy, iz + dz, cfg.log2_table);
            const float* feat = table + static_cast<size_t>(row) * F;
            for (int f = 0; f < F; ++f) o[f] += w * static_cast<double>(feat[f]);
            if (cr) {
                cr->rows[c] = row;
                cr->weights[c] = w;
            }
        }
    }
}

void decode_geometry(const MapModel& map, const double* gamma, const double* valpha,
                     double* geo_act, double& s, const double*& h) {
    const MlpSpec& geo = map.layout.geo;
    // Concatenated input [gamma, valpha] written straight into the act buffer.
    const int gd = map.cfg.gamma_dim(), vd = map.cfg.valpha_dim();
    std::vector<double> input(gd + vd);
    for (int i = 0; i < gd; ++i) input[i] = gamma[i];
    for (int i = 0; i < vd; ++i) input[gd + i] = valpha[i];
    geo.forward(map.params.data(), input.data(), geo_act);
    const double* out = geo_act + geo.act_size() - geo.out_dim;
    s = out[0];
    h = out + 1;
}

void decode_color(const MapModel& map, const double* gamma, const double* h, double* color_act,
                  Vec3& c) {
    const MlpSpec& spec = map.layout.color;
    const int gd = map.cfg.gamma_dim();
    std::vector<double> input(gd + map.cfg.h_dim);
    for (int i = 0; i < gd; ++i) input[i] = gamma[i];
    for (int i = 0; i < map.cfg.h_dim; ++i) input[gd + i] = h[i];
    spec.forward(map.params.data(), input.data(), color_act);
    const double* out = color_act + spec.act_size() - spec.out_dim;
    c = {sigmoid(out[0]), sigmoid(out[1]), sigmoid(out[2])};
}

UVertexFootprint ugrid_footprint(const UncertaintyGridInfo& g, const Vec3& x) {
    double px = (x.x - g.origin.x) / g.voxel;
    double py = (x.y - g.origin.y) / g.voxel;
    double pz = (x.z - g.origin.z) / g.voxel;
    px = std::min(static_cast<double>(g.nx - 1), std::max(0.0, px));
    py = std::min(static_cast<double>(g.ny - 1), std::max(0.0, py));
    pz = std::min(static_cast<double>(g.nz - 1), std::max(0.0, pz));
    int ix = std::min(static_cast<int>(px), g.nx - 2 >= 0 ? g.nx - 2 : 0);
    int iy = std::min(static_cast<int>(py), g.ny - 2 >= 0 ? g.ny - 2 : 0);
    int iz = std::min(static_cast<int>(pz), g.nz - 2 >= 0 ? g.nz - 2 : 0);
    double tx = px - ix, ty = py - iy, tz = pz - iz;
    UVertexFootprint fp;
    for (int c = 0; c < 8; ++c) {
        int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        fp.idx[c] = g.index(std::min(ix + dx, g.nx - 1), std::min(iy + dy, g.ny - 1),
                            std::min(iz + dz, g.nz - 1));
        fp.weights[c] = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
    }
    return fp;
}

double ugrid_interp_raw(const MapModel& map, const Vec3& x) {
    UVertexFootprint fp = ugrid_footprint(map.layout.ugrid, x);
    const float* raw = map.uraw();
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) acc += fp.weights[c] * static_cast<double>(raw[fp.idx[c]]);
    return acc;
}

double query_uncertainty(const MapModel& map, const Vec3& x) {
    if (map.cfg.uncertainty_mode == UncertaintyMode::Grid)
        return softplus(ugrid_interp_raw(map, x));
    // Net mode: f_sigma(gamma, h) through the geometry decoder.
    std::vector<double> gamma(map.cfg.gamma_dim()), valpha(map.cfg.valpha_dim());
    std::vector<double> geo_act(map.layout.geo.act_size());
    std::vector<double> unet_act(map.layout.unet.act_size());
    one_blob_encode(x, map.cfg, gamma.data());
    grid_features(map, x, valpha.data(), nullptr);
    double s;
    const double* h;
    decode_geometry(map, gamma.data(), valpha.data(), geo_act.data(), s, h);
    const int gd = map.cfg.gamma_dim();
    std::vector<double> input(gd + map.cfg.h_dim);
    for (int i = 0; i < gd; ++i) input[i] = gamma[i];
    for (int i = 0; i < map.cfg.h_dim; ++i) input[gd + i] = h[i];
    map.layout.unet.forward(map.params.data(), input.data(), unet_act.data());
    return softplus(unet_act[map.layout.unet.act_size() - 1]);
}

double query_sdf(const MapModel& map, const Vec3& x) {
    std::vector<double> gamma(map.cfg.gamma_dim()), valpha(map.cfg.valpha_dim());
    std::vector<double> geo_act(map.layout.geo.act_size());
    one_blob_encode(x, map.cfg, gamma.data());
    grid_features(map, x, valpha.data(), nullptr);
    double s;
    const double* h;
    decode_geometry(map, gamma.data(), valpha.data(), geo_act.data(), s, h);
    return s;
}

Vec3 query_color(const MapModel& map, const Vec3& x) {
    std::vector<double> gamma(map.cfg.gamma_dim()), valpha(map.cfg.valpha_dim());
    std::vector<double> geo_act(map.layout.geo.act_size());
    std::vector<double> color_act(map.layout.color.act_size());
    one_blob_encode(x, map.cfg, gamma.data());
    grid_features(map, x, valpha.data(), nullptr);
    double s;
    const double* h;
    decode_geometry(map, gamma.data(), valpha.data(), geo_act.data(), s, h);
    Vec3 c;
    decode_color(map, gamma.data(), h, color_act.data(), c);
    return c;
}

}  // namespace recon
