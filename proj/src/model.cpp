#include "regerr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "regerr/nn/ops.hpp"

namespace regerr {

using nn::Shape;
using nn::Tensor;

ModelConfig ModelConfig::toy() {
    ModelConfig cfg;
    cfg.patch_size = 32;
    cfg.unet_channels = 4;
    cfg.embed_dim = 12;
    cfg.window_size = 4;
    return cfg;
}

void ModelConfig::validate() const {
    if (patch_size < 32 || patch_size % 32 != 0)
        throw ConfigError("patch_size must be a positive multiple of 32");
    if (unet_channels < 1) throw ConfigError("unet_channels must be positive");
    if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
    if (window_size < 1) throw ConfigError("window_size must be positive");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be positive");
    for (int s = 0; s < 4; ++s) {
        if (depths[size_t(s)] < 1) throw ConfigError("stage depths must be positive");
        const std::int64_t dim = embed_dim << s;
        if (num_heads[size_t(s)] < 1 || dim % num_heads[size_t(s)] != 0)
            throw ConfigError("stage dim must be divisible by its head count");
    }
}

Tensor& ModelParameters::at(const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw KeyMismatch("unknown parameter: " + name);
    return it->second;
}

const Tensor& ModelParameters::at(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw KeyMismatch("unknown parameter: " + name);
    return it->second;
}

void ModelParameters::add(const std::string& name, Tensor t) {
    if (by_name.count(name)) throw DuplicateId("duplicate parameter: " + name);
    order.push_back(name);
    by_name.emplace(name, std::move(t));
}

std::int64_t ModelParameters::count() const {
    std::int64_t n = 0;
    for (const auto& name : order) n += at(name).numel();
    return n;
}

void ModelParameters::zero_grad() {
    for (const auto& name : order) {
        auto& g = at(name).node()->grad;
        std::fill(g.begin(), g.end(), 0.0);
    }
}

namespace {

Tensor init_tensor(const Shape& shape, Rng& rng, double std_dev) {
    std::vector<double> v(static_cast<std::size_t>(nn::shape_numel(shape)));
    for (auto& x : v) x = std_dev == 0.0 ? 0.0 : std_dev * rng.normal();
    return Tensor::from(shape, std::move(v), true);
}

void add_conv(ModelParameters& p, Rng& rng, const std::string& name, std::int64_t co,
              std::int64_t ci, std::int64_t k) {
    const double he = std::sqrt(2.0 / static_cast<double>(ci * k * k * k));
    p.add(name + ".w", init_tensor({co, ci, k, k, k}, rng, he));
    p.add(name + ".b", init_tensor({co}, rng, 0.0));
}

void add_linear(ModelParameters& p, Rng& rng, const std::string& name, std::int64_t din,
                std::int64_t dout, bool bias) {
    p.add(name + ".w", init_tensor({din, dout}, rng, 0.02));
    if (bias) p.add(name + ".b", init_tensor({dout}, rng, 0.0));
}

void add_layernorm(ModelParameters& p, const std::string& name, std::int64_t d) {
    p.add(name + ".g", Tensor::from({d}, std::vector<double>(size_t(d), 1.0), true));
    p.add(name + ".b", Tensor::from({d}, std::vector<double>(size_t(d), 0.0), true));
}

void add_unet(ModelParameters& p, Rng& rng, const std::string& prefix, std::int64_t c) {
    add_conv(p, rng, prefix + ".e0a", c, 1, 3);
    add_conv(p, rng, prefix + ".e0b", c, c, 3);
    add_conv(p, rng, prefix + ".e1a", 2 * c, c, 3);
    add_conv(p, rng, prefix + ".e1b", 2 * c, 2 * c, 3);
    add_conv(p, rng, prefix + ".bna", 4 * c, 2 * c, 3);
    add_conv(p, rng, prefix + ".bnb", 4 * c, 4 * c, 3);
    add_conv(p, rng, prefix + ".u1", 2 * c, 4 * c, 3);
    add_conv(p, rng, prefix + ".d1a", 2 * c, 4 * c, 3);
    add_conv(p, rng, prefix + ".d1b", 2 * c, 2 * c, 3);
    add_conv(p, rng, prefix + ".u0", c, 2 * c, 3);
    add_conv(p, rng, prefix + ".d0a", c, 2 * c, 3);
    add_conv(p, rng, prefix + ".d0b", c, c, 3);
}

// effective window edge at resolution r: never larger than the token grid
std::int64_t window_at(const ModelConfig& cfg, std::int64_t r) {
    return std::min(cfg.window_size, r);
}

std::string stage_block(int s, std::int64_t b) {
    return "swin.stage" + std::to_string(s) + ".block" + std::to_string(b);
}

} // namespace

ModelParameters build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParameters p;
    Rng rng(seed);
    const std::int64_t C = cfg.unet_channels, E = cfg.embed_dim, P = cfg.patch_size;

    add_unet(p, rng, "unet.mri", C);
    add_unet(p, rng, "unet.ius", C);

    add_conv(p, rng, "swin.embed", E, 2 * C, 2);

    for (int s = 0; s < 4; ++s) {
        const std::int64_t dim = E << s;
        const std::int64_t res = P >> (s + 1);
        const std::int64_t w = window_at(cfg, res);
        const std::int64_t table_rows = (2 * w - 1) * (2 * w - 1) * (2 * w - 1);
        for (std::int64_t b = 0; b < cfg.depths[size_t(s)]; ++b) {
            const std::string bp = stage_block(s, b);
            add_layernorm(p, bp + ".norm1", dim);
            add_linear(p, rng, bp + ".attn.wq", dim, dim, true);
            add_linear(p, rng, bp + ".attn.wk", dim, dim, true);
            add_linear(p, rng, bp + ".attn.wv", dim, dim, true);
            p.add(bp + ".attn.bias_table",
                  init_tensor({table_rows, cfg.num_heads[size_t(s)]}, rng, 0.02));
            add_linear(p, rng, bp + ".attn.proj", dim, dim, true);
            add_layernorm(p, bp + ".norm2", dim);
            add_linear(p, rng, bp + ".mlp.fc1", dim, cfg.mlp_ratio * dim, true);
            add_linear(p, rng, bp + ".mlp.fc2", cfg.mlp_ratio * dim, dim, true);
        }
        const std::string mp = "swin.merge" + std::to_string(s);
        add_layernorm(p, mp + ".norm", 8 * dim);
        add_linear(p, rng, mp + ".reduce", 8 * dim, 2 * dim, false);
    }

    // UNETR-style decoder: five upsample+fuse steps back to full resolution
    add_conv(p, rng, "dec5.up", 8 * E, 16 * E, 3);
    add_conv(p, rng, "dec5.fuse", 8 * E, 16 * E, 3);
    add_conv(p, rng, "dec4.up", 4 * E, 8 * E, 3);
    add_conv(p, rng, "dec4.fuse", 4 * E, 8 * E, 3);
    add_conv(p, rng, "dec3.up", 2 * E, 4 * E, 3);
    add_conv(p, rng, "dec3.fuse", 2 * E, 4 * E, 3);
    add_conv(p, rng, "dec2.up", E, 2 * E, 3);
    add_conv(p, rng, "dec2.fuse", E, 2 * E, 3);
    add_conv(p, rng, "dec1.up", E, E, 3);
    add_conv(p, rng, "dec1.fuse", E, E + 2 * C, 3);
    add_conv(p, rng, "head.conv", E, E, 3);
    add_conv(p, rng, "head.out", 1, E, 1);
    return p;
}

namespace {

Tensor crelu(ModelParameters& p, const std::string& name, const Tensor& x, int stride = 1,
             int pad = 1) {
    return nn::relu(nn::conv3d(x, p.at(name + ".w"), p.at(name + ".b"), stride, pad));
}

Tensor unet_forward(ModelParameters& p, const std::string& prefix, const Tensor& x) {
    Tensor e0 = crelu(p, prefix + ".e0b", crelu(p, prefix + ".e0a", x));
    Tensor e1 = crelu(p, prefix + ".e1b", crelu(p, prefix + ".e1a", nn::maxpool3d_2(e0)));
    Tensor bn = crelu(p, prefix + ".bnb", crelu(p, prefix + ".bna", nn::maxpool3d_2(e1)));
    Tensor u1 = crelu(p, prefix + ".u1", nn::upsample_nearest3d_2(bn));
    Tensor d1 = crelu(p, prefix + ".d1b", crelu(p, prefix + ".d1a", nn::concat({u1, e1}, 1)));
    Tensor u0 = crelu(p, prefix + ".u0", nn::upsample_nearest3d_2(d1));
    return crelu(p, prefix + ".d0b", crelu(p, prefix + ".d0a", nn::concat({u0, e0}, 1)));
}

// [N, Rp, Rp, Rp, D] -> [N*nW, w^3, D], windows in (x,y,z) row-major order
Tensor window_partition(const Tensor& x5, std::int64_t w) {
    const auto& s = x5.shape();
    const std::int64_t n = s[0], rp = s[1], d = s[4], nx = rp / w;
    Tensor x = nn::reshape(x5, {n, nx, w, nx, w, nx, w, d});
    x = nn::permute(x, {0, 1, 3, 5, 2, 4, 6, 7});
    return nn::reshape(x, {n * nx * nx * nx, w * w * w, d});
}

Tensor window_reverse(const Tensor& win, std::int64_t n, std::int64_t rp, std::int64_t w,
                      std::int64_t d) {
    const std::int64_t nx = rp / w;
    Tensor x = nn::reshape(win, {n, nx, nx, nx, w, w, w, d});
    x = nn::permute(x, {0, 1, 4, 2, 5, 3, 6, 7});
    return nn::reshape(x, {n, rp, rp, rp, d});
}

// relative-position index into the (2w-1)^3 bias table for every token pair
std::vector<std::int64_t> relpos_index(std::int64_t w) {
    const std::int64_t t = w * w * w, span = 2 * w - 1;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(t * t));
    auto coord = [w](std::int64_t i) {
        return std::array<std::int64_t, 3>{i / (w * w), (i / w) % w, i % w};
    };
    for (std::int64_t a = 0; a < t; ++a) {
        const auto ca = coord(a);
        for (std::int64_t b = 0; b < t; ++b) {
            const auto cb = coord(b);
            const std::int64_t rx = ca[0] - cb[0] + w - 1;
            const std::int64_t ry = ca[1] - cb[1] + w - 1;
            const std::int64_t rz = ca[2] - cb[2] + w - 1;
            idx[static_cast<std::size_t>(a * t + b)] = (rx * span + ry) * span + rz;
        }
    }
    return idx;
}

// additive mask (0 or -100) preventing attention across wrapped shift regions
std::vector<double> shift_mask(std::int64_t rp, std::int64_t w, std::int64_t shift) {
    const std::int64_t nx = rp / w, t = w * w * w;
    auto seg = [rp, w, shift](std::int64_t i) {
        return i < rp - w ? 0 : (i < rp - shift ? 1 : 2);
    };
    std::vector<double> mask(static_cast<std::size_t>(nx * nx * nx * t * t), 0.0);
    std::vector<int> label(static_cast<std::size_t>(t));
    std::size_t wi = 0;
    for (std::int64_t wx = 0; wx < nx; ++wx)
        for (std::int64_t wy = 0; wy < nx; ++wy)
            for (std::int64_t wz = 0; wz < nx; ++wz, ++wi) {
                std::size_t li = 0;
                for (std::int64_t ix = 0; ix < w; ++ix)
                    for (std::int64_t iy = 0; iy < w; ++iy)
                        for (std::int64_t iz = 0; iz < w; ++iz)
                            label[li++] = 9 * seg(wx * w + ix) + 3 * seg(wy * w + iy) +
                                          seg(wz * w + iz);
                double* m = mask.data() + wi * t * t;
                for (std::int64_t a = 0; a < t; ++a)
                    for (std::int64_t b = 0; b < t; ++b)
                        if (label[size_t(a)] != label[size_t(b)]) m[a * t + b] = -100.0;
            }
    return mask;
}

Tensor split_heads(const Tensor& x, std::int64_t b, std::int64_t t, std::int64_t h,
                   std::int64_t dh) {
    Tensor y = nn::reshape(x, {b, t, h, dh});
    y = nn::permute(y, {0, 2, 1, 3});
    return nn::reshape(y, {b * h, t, dh});
}

Tensor swin_block(ModelParameters& p, const std::string& bp, const Tensor& x, std::int64_t n,
                  std::int64_t res, std::int64_t dim, std::int64_t heads, std::int64_t w,
                  std::int64_t shift) {
    Tensor h = nn::layernorm(x, p.at(bp + ".norm1.g"), p.at(bp + ".norm1.b"));
    Tensor h5 = nn::reshape(h, {n, res, res, res, dim});

    const std::int64_t rp = (res + w - 1) / w * w;
    const std::int64_t pad = rp - res;
    if (pad) {
        h5 = nn::pad_dim(h5, 1, 0, pad);
        h5 = nn::pad_dim(h5, 2, 0, pad);
        h5 = nn::pad_dim(h5, 3, 0, pad);
    }
    if (shift) h5 = nn::roll(h5, {0, -shift, -shift, -shift, 0});

    Tensor win = window_partition(h5, w); // [n*nW, T, dim]
    const std::int64_t nw = (rp / w) * (rp / w) * (rp / w);
    const std::int64_t t = w * w * w;
    const std::int64_t dh = dim / heads;
    const std::int64_t b = n * nw;

    Tensor q = split_heads(nn::linear(win, p.at(bp + ".attn.wq.w"), p.at(bp + ".attn.wq.b")), b, t,
                           heads, dh);
    Tensor k = split_heads(nn::linear(win, p.at(bp + ".attn.wk.w"), p.at(bp + ".attn.wk.b")), b, t,
                           heads, dh);
    Tensor v = split_heads(nn::linear(win, p.at(bp + ".attn.wv.w"), p.at(bp + ".attn.wv.b")), b, t,
                           heads, dh);

    Tensor logits = nn::scale(nn::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor bias = nn::gather_rows(p.at(bp + ".attn.bias_table"), relpos_index(w));
    bias = nn::permute(nn::reshape(bias, {t, t, heads}), {2, 0, 1});
    const std::vector<double> mask = shift ? shift_mask(rp, w, shift) : std::vector<double>{};
    logits = nn::add_attn_extras(logits, bias, mask, heads, nw);

    Tensor o = nn::bmm(nn::softmax_last(logits), v); // [b*heads, T, dh]
    o = nn::reshape(nn::permute(nn::reshape(o, {b, heads, t, dh}), {0, 2, 1, 3}), {b, t, dim});
    o = nn::linear(o, p.at(bp + ".attn.proj.w"), p.at(bp + ".attn.proj.b"));

    Tensor out5 = window_reverse(o, n, rp, w, dim);
    if (shift) out5 = nn::roll(out5, {0, shift, shift, shift, 0});
    if (pad) {
        out5 = nn::narrow(out5, 1, 0, res);
        out5 = nn::narrow(out5, 2, 0, res);
        out5 = nn::narrow(out5, 3, 0, res);
    }
    Tensor y = nn::add(x, nn::reshape(out5, {n, res * res * res, dim}));

    Tensor m = nn::layernorm(y, p.at(bp + ".norm2.g"), p.at(bp + ".norm2.b"));
    m = nn::linear(m, p.at(bp + ".mlp.fc1.w"), p.at(bp + ".mlp.fc1.b"));
    m = nn::gelu(m);
    m = nn::linear(m, p.at(bp + ".mlp.fc2.w"), p.at(bp + ".mlp.fc2.b"));
    return nn::add(y, m);
}

// [N, R^3, D] tokens -> [N, (R/2)^3, 2D] via 2x2x2 concat + LN + reduction
Tensor patch_merge(ModelParameters& p, const std::string& mp, const Tensor& x, std::int64_t n,
                   std::int64_t res, std::int64_t dim) {
    Tensor x5 = nn::reshape(x, {n, res / 2, 2, res / 2, 2, res / 2, 2, dim});
    x5 = nn::permute(x5, {0, 1, 3, 5, 2, 4, 6, 7});
    Tensor m = nn::reshape(x5, {n, (res / 2) * (res / 2) * (res / 2), 8 * dim});
    m = nn::layernorm(m, p.at(mp + ".norm.g"), p.at(mp + ".norm.b"));
    return nn::linear(m, p.at(mp + ".reduce.w"), std::nullopt);
}

// [N, R^3, D] tokens -> [N, D, R, R, R] feature map
Tensor tokens_to_map(const Tensor& x, std::int64_t n, std::int64_t res, std::int64_t dim) {
    return nn::permute(nn::reshape(x, {n, res, res, res, dim}), {0, 4, 1, 2, 3});
}

Tensor up_fuse(ModelParameters& p, const std::string& name, const Tensor& x, const Tensor& skip) {
    Tensor u = crelu(p, name + ".up", nn::upsample_nearest3d_2(x));
    return crelu(p, name + ".fuse", nn::concat({u, skip}, 1));
}

} // namespace

Tensor forward(const ModelConfig& cfg, ModelParameters& params, const Tensor& mri,
               const Tensor& ius) {
    cfg.validate();
    const std::int64_t P = cfg.patch_size, E = cfg.embed_dim;
    const Shape expect{mri.shape()[0], 1, P, P, P};
    if (mri.shape() != expect || ius.shape() != expect)
        throw ShapeError("forward: inputs must be [N, 1, P, P, P]");
    const std::int64_t n = mri.shape()[0];

    Tensor fm = unet_forward(params, "unet.mri", mri);
    Tensor fu = unet_forward(params, "unet.ius", ius);
    Tensor feats = nn::concat({fm, fu}, 1); // [N, 2C, P, P, P]

    Tensor emb = nn::conv3d(feats, params.at("swin.embed.w"), params.at("swin.embed.b"), 2, 0);
    // to tokens [N, (P/2)^3, E]
    Tensor x = nn::reshape(nn::permute(emb, {0, 2, 3, 4, 1}), {n, (P / 2) * (P / 2) * (P / 2), E});

    std::array<Tensor, 4> skips;
    for (int s = 0; s < 4; ++s) {
        const std::int64_t dim = E << s;
        const std::int64_t res = P >> (s + 1);
        const std::int64_t w = window_at(cfg, res);
        for (std::int64_t b = 0; b < cfg.depths[size_t(s)]; ++b) {
            const std::int64_t shift = (b % 2 == 1 && res > w) ? w / 2 : 0;
            x = swin_block(params, stage_block(s, b), x, n, res, dim, cfg.num_heads[size_t(s)], w,
                           shift);
        }
        skips[size_t(s)] = tokens_to_map(x, n, res, dim);
        x = patch_merge(params, "swin.merge" + std::to_string(s), x, n, res, dim);
    }
    Tensor d = tokens_to_map(x, n, P / 32, 16 * E); // bottleneck

    d = up_fuse(params, "dec5", d, skips[3]);
    d = up_fuse(params, "dec4", d, skips[2]);
    d = up_fuse(params, "dec3", d, skips[1]);
    d = up_fuse(params, "dec2", d, skips[0]);
    d = up_fuse(params, "dec1", d, feats);

    Tensor h = crelu(params, "head.conv", d);
    Tensor out = nn::conv3d(h, params.at("head.out.w"), params.at("head.out.b"), 1, 0);
    return nn::softplus(out);
}

namespace {
constexpr char kMagic[4] = {'R', 'G', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;
} // namespace

void save_parameters(const ModelParameters& params, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(kMagic, 4);
    auto put = [&f](const void* p, std::size_t n) { f.write(static_cast<const char*>(p), std::streamsize(n)); };
    const std::uint32_t ver = kVersion;
    put(&ver, 4);
    const std::uint64_t count = params.order.size();
    put(&count, 8);
    for (const auto& name : params.order) {
        const Tensor& t = params.at(name);
        const auto len = static_cast<std::uint32_t>(name.size());
        put(&len, 4);
        put(name.data(), name.size());
        const auto rank = static_cast<std::uint32_t>(t.shape().size());
        put(&rank, 4);
        for (auto d : t.shape()) put(&d, 8);
        put(t.data().data(), t.data().size() * sizeof(double));
    }
    if (!f) throw IoError("write failed: " + path.string());
}

void load_parameters(ModelParameters& params, const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileMissing("cannot open: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not a parameter snapshot: " + path.string());
    auto get = [&f, &path](void* p, std::size_t n) {
        f.read(static_cast<char*>(p), std::streamsize(n));
        if (!f) throw FormatError("truncated parameter snapshot: " + path.string());
    };
    std::uint32_t ver = 0;
    get(&ver, 4);
    if (ver != kVersion)
        throw VersionMismatch("parameter snapshot version " + std::to_string(ver));
    std::uint64_t count = 0;
    get(&count, 8);
    if (count != params.order.size())
        throw KeyMismatch("snapshot has " + std::to_string(count) + " parameters, model has " +
                          std::to_string(params.order.size()));
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        get(&len, 4);
        std::string name(len, '\0');
        get(name.data(), len);
        auto it = params.by_name.find(name);
        if (it == params.by_name.end()) throw KeyMismatch("unexpected parameter: " + name);
        std::uint32_t rank = 0;
        get(&rank, 4);
        Shape shape(rank);
        for (auto& d : shape) get(&d, 8);
        Tensor& t = it->second;
        if (shape != t.shape()) throw ShapeMismatch("shape mismatch for parameter: " + name);
        get(t.data().data(), t.data().size() * sizeof(double));
    }
}

} // namespace regerr
