#include "dipstop/network.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dipstop/errors.hpp"
#include "dipstop/rng.hpp"
#include "layers.hpp"

namespace dipstop {

// ---------------------------------------------------------------- enums

std::string to_string(Activation a) { return a == Activation::leaky_relu ? "leaky_relu" : "softplus"; }
std::string to_string(Upsample u) { return u == Upsample::bilinear ? "bilinear" : "nearest"; }
std::string to_string(Norm n) { return n == Norm::batch ? "batch" : "none"; }

Activation parse_activation(std::string_view s)
{
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "softplus") return Activation::softplus;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

Upsample parse_upsample(std::string_view s)
{
    if (s == "bilinear") return Upsample::bilinear;
    if (s == "nearest") return Upsample::nearest;
    throw ConfigError("unknown upsample mode '" + std::string(s) + "'");
}

Norm parse_norm(std::string_view s)
{
    if (s == "batch") return Norm::batch;
    if (s == "none") return Norm::none;
    throw ConfigError("unknown norm '" + std::string(s) + "'");
}

void ArchSpec::validate() const
{
    if (depth < 1) throw ConfigError("arch: depth must be >= 1");
    if (depth > 8) throw ConfigError("arch: depth must be <= 8");
    if (static_cast<int>(channels.size()) != depth) throw ConfigError("arch: channels list length must equal depth");
    if (static_cast<int>(skip_channels.size()) != depth)
        throw ConfigError("arch: skip_channels list length must equal depth");
    for (int c : channels)
        if (c < 1) throw ConfigError("arch: channel counts must be >= 1");
    for (int s : skip_channels)
        if (s < 0) throw ConfigError("arch: skip channel counts must be >= 0");
}

// ---------------------------------------------------------------- tensor packing

Tensor pack(std::span<const Image* const> items)
{
    const Shape& s = items.front()->shape();
    Tensor t(s.channels, static_cast<int>(items.size()), s.height, s.width);
    for (int b = 0; b < static_cast<int>(items.size()); ++b) {
        require_same_shape(*items.front(), *items[b], "pack");
        for (int c = 0; c < s.channels; ++c) {
            const auto plane = items[b]->plane(c);
            std::copy(plane.begin(), plane.end(), t.plane_ptr(c, b));
        }
    }
    return t;
}

Tensor pack(const Image& a)
{
    const Image* items[] = {&a};
    return pack(items);
}

Tensor pack(const Image& a, const Image& b)
{
    const Image* items[] = {&a, &b};
    return pack(items);
}

Image unpack(const Tensor& t, int b)
{
    Image img(t.height, t.width, t.channels);
    for (int c = 0; c < t.channels; ++c) std::copy_n(t.plane_ptr(c, b), t.plane(), img.plane(c).begin());
    return img;
}

// ---------------------------------------------------------------- Tape

Tape::Tape() = default;
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

// ---------------------------------------------------------------- HourglassNet

namespace {

Tensor mirror_pad(const Tensor& x, int top, int left, int h, int w)
{
    Tensor out(x.channels, x.batch, h, w);
    for (int c = 0; c < x.channels; ++c)
        for (int b = 0; b < x.batch; ++b) {
            const double* src = x.plane_ptr(c, b);
            double* dst = out.plane_ptr(c, b);
            for (int y = 0; y < h; ++y) {
                const int sy = mirror_index(y - top, x.height);
                for (int xo = 0; xo < w; ++xo) dst[y * w + xo] = src[sy * x.width + mirror_index(xo - left, x.width)];
            }
        }
    return out;
}

// Adjoint of mirror_pad.
Tensor mirror_pad_adjoint(const Tensor& g, int top, int left, int h, int w)
{
    Tensor out(g.channels, g.batch, h, w);
    for (int c = 0; c < g.channels; ++c)
        for (int b = 0; b < g.batch; ++b) {
            const double* src = g.plane_ptr(c, b);
            double* dst = out.plane_ptr(c, b);
            for (int y = 0; y < g.height; ++y) {
                const int sy = mirror_index(y - top, h);
                for (int xo = 0; xo < g.width; ++xo) dst[sy * w + mirror_index(xo - left, w)] += src[y * g.width + xo];
            }
        }
    return out;
}

Tensor crop(const Tensor& x, int top, int left, int h, int w)
{
    Tensor out(x.channels, x.batch, h, w);
    for (int c = 0; c < x.channels; ++c)
        for (int b = 0; b < x.batch; ++b) {
            const double* src = x.plane_ptr(c, b);
            double* dst = out.plane_ptr(c, b);
            for (int y = 0; y < h; ++y) std::copy_n(src + (y + top) * x.width + left, w, dst + y * w);
        }
    return out;
}

Tensor crop_adjoint(const Tensor& g, int top, int left, int h, int w)
{
    Tensor out(g.channels, g.batch, h, w);
    for (int c = 0; c < g.channels; ++c)
        for (int b = 0; b < g.batch; ++b) {
            const double* src = g.plane_ptr(c, b);
            double* dst = out.plane_ptr(c, b);
            for (int y = 0; y < g.height; ++y) std::copy_n(src + y * g.width, g.width, dst + (y + top) * w + left);
        }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b)
{
    Tensor out(a.channels + b.channels, a.batch, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

Tensor slice_channels(const Tensor& t, int first, int count)
{
    Tensor out(count, t.batch, t.height, t.width);
    const auto begin = t.data.begin() + static_cast<std::ptrdiff_t>(first * t.row());
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(out.size()), out.data.begin());
    return out;
}

struct Padding {
    int top, left, height, width;
};

// Padded sides are multiples of 2^depth and at least 4 * 2^depth, so the
// coarsest level still has 4x4 samples for normalization statistics.
Padding padding_for(int h, int w, int depth)
{
    const int m = 1 << depth;
    const int ph = std::max((h + m - 1) / m * m, 4 * m);
    const int pw = std::max((w + m - 1) / m * m, 4 * m);
    return {(ph - h) / 2, (pw - w) / 2, ph, pw};
}

}  // namespace

HourglassNet HourglassNet::init(const ArchSpec& spec, int channels_in_out, std::uint64_t seed)
{
    spec.validate();
    if (channels_in_out < 1) throw ConfigError("network: channel count must be >= 1");
    HourglassNet net;
    net.spec_ = spec;
    net.channels_ = channels_in_out;
    net.seed_ = seed;
    net.build();
    Rng rng = make_rng(seed, stream::kNetworkInit);
    for (const auto& layer : net.layers_)
        layer->init(std::span<double>(net.theta_).subspan(layer->offset, layer->num_params()), rng);
    return net;
}

void HourglassNet::build()
{
    std::size_t offset = 0;
    auto add = [&](std::shared_ptr<Layer> layer) {
        layer->offset = offset;
        offset += layer->num_params();
        layers_.push_back(std::move(layer));
        return static_cast<int>(layers_.size()) - 1;
    };
    const bool bn = spec_.norm == Norm::batch;
    auto conv_block = [&](std::vector<int>& seq, int in, int out, int k, int stride) {
        seq.push_back(add(std::make_shared<Conv2d>(in, out, k, stride)));
        if (bn) seq.push_back(add(std::make_shared<BatchNorm>(out)));
        seq.push_back(add(std::make_shared<Act>(spec_.activation)));
    };

    levels_.assign(spec_.depth, {});
    int in = channels_;
    for (int i = 0; i < spec_.depth; ++i) {
        Level& lv = levels_[i];
        const int ch = spec_.channels[i];
        conv_block(lv.down, in, ch, 3, 2);
        conv_block(lv.down, ch, ch, 3, 1);
        if (spec_.skip_channels[i] > 0) conv_block(lv.skip, in, spec_.skip_channels[i], 1, 1);
        lv.upsample = add(std::make_shared<Upsample2x>(spec_.upsample));
        in = ch;
    }
    // Decoder input widths depend on the level below, so build bottom-up.
    for (int i = spec_.depth - 1; i >= 0; --i) {
        Level& lv = levels_[i];
        const int ch = spec_.channels[i];
        const int deeper = i + 1 < spec_.depth ? spec_.channels[i + 1] : ch;
        const int cat = spec_.skip_channels[i] + deeper;
        if (bn) lv.decode.push_back(add(std::make_shared<BatchNorm>(cat)));
        conv_block(lv.decode, cat, ch, 3, 1);
        conv_block(lv.decode, ch, ch, 1, 1);
    }
    head_ = add(std::make_shared<Conv2d>(spec_.channels[0], channels_, 1, 1));
    theta_.assign(offset, 0.0);
}

Tensor HourglassNet::run_seq(const std::vector<int>& ids, Tensor x, PassMode mode, Tape& tape) const
{
    for (int id : ids) {
        const Layer& layer = *layers_[id];
        x = layer.forward(std::span<const double>(theta_).subspan(layer.offset, layer.num_params()), x, mode,
                          tape.caches_[id]);
    }
    return x;
}

Tensor HourglassNet::back_seq(const std::vector<int>& ids, Tensor g, Tape& tape, std::span<double> grad) const
{
    for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
        const Layer& layer = *layers_[*it];
        g = layer.backward(std::span<const double>(theta_).subspan(layer.offset, layer.num_params()), g, tape.mode_,
                           tape.caches_[*it], grad.subspan(layer.offset, layer.num_params()));
    }
    return g;
}

Tensor HourglassNet::run_level(int level, const Tensor& x, PassMode mode, Tape& tape) const
{
    const Level& lv = levels_[level];
    Tensor deep = run_seq(lv.down, x, mode, tape);
    if (level + 1 < spec_.depth) deep = run_level(level + 1, deep, mode, tape);
    const Layer& up = *layers_[lv.upsample];
    Tensor merged = up.forward({}, deep, mode, tape.caches_[lv.upsample]);
    if (!lv.skip.empty()) merged = concat_channels(run_seq(lv.skip, x, mode, tape), merged);
    return run_seq(lv.decode, std::move(merged), mode, tape);
}

Tensor HourglassNet::back_level(int level, const Tensor& g, Tape& tape, std::span<double> grad) const
{
    const Level& lv = levels_[level];
    Tensor g_merged = back_seq(lv.decode, g, tape, grad);
    Tensor g_input;
    Tensor g_up = g_merged;
    if (!lv.skip.empty()) {
        const int skip = spec_.skip_channels[level];
        g_input = back_seq(lv.skip, slice_channels(g_merged, 0, skip), tape, grad);
        g_up = slice_channels(g_merged, skip, g_merged.channels - skip);
    }
    Tensor g_deep = layers_[lv.upsample]->backward({}, g_up, tape.mode_, tape.caches_[lv.upsample], {});
    if (level + 1 < spec_.depth) g_deep = back_level(level + 1, g_deep, tape, grad);
    Tensor g_down = back_seq(lv.down, std::move(g_deep), tape, grad);
    if (g_input.data.empty()) return g_down;
    for (std::size_t i = 0; i < g_down.size(); ++i) g_input.data[i] += g_down.data[i];
    return g_input;
}

Tensor HourglassNet::forward(const Tensor& input, PassMode mode, Tape& tape) const
{
    if (input.channels != channels_)
        throw ShapeError("network: expected " + std::to_string(channels_) + " channels, got " +
                         std::to_string(input.channels));
    if (mode == PassMode::tangent && input.batch != 2) throw ShapeError("network: tangent pass needs batch 2");
    if (tape.caches_.size() != layers_.size()) tape.caches_.resize(layers_.size());
    tape.mode_ = mode;
    tape.in_height_ = input.height;
    tape.in_width_ = input.width;
    const Padding pad = padding_for(input.height, input.width, spec_.depth);
    Tensor x = mirror_pad(input, pad.top, pad.left, pad.height, pad.width);
    Tensor features = run_level(0, x, mode, tape);
    const Layer& head = *layers_[head_];
    Tensor out = head.forward(std::span<const double>(theta_).subspan(head.offset, head.num_params()), features, mode,
                              tape.caches_[head_]);
    return crop(out, pad.top, pad.left, input.height, input.width);
}

Tensor HourglassNet::backward(const Tensor& grad_output, Tape& tape, std::span<double> grad_theta) const
{
    if (grad_theta.size() != theta_.size()) throw ShapeError("network: gradient buffer has the wrong size");
    const Padding pad = padding_for(tape.in_height_, tape.in_width_, spec_.depth);
    Tensor g = crop_adjoint(grad_output, pad.top, pad.left, pad.height, pad.width);
    const Layer& head = *layers_[head_];
    g = head.backward(std::span<const double>(theta_).subspan(head.offset, head.num_params()), g, tape.mode_,
                      tape.caches_[head_], grad_theta.subspan(head.offset, head.num_params()));
    g = back_level(0, g, tape, grad_theta);
    return mirror_pad_adjoint(g, pad.top, pad.left, tape.in_height_, tape.in_width_);
}

Image HourglassNet::forward(const Image& input) const
{
    Tape tape;
    return unpack(forward(pack(input), PassMode::independent, tape), 0);
}

Image HourglassNet::input_vjp(const Image& y, const Image& v) const
{
    require_same_shape(y, v, "input_vjp");
    Tape tape;
    forward(pack(y), PassMode::independent, tape);
    std::vector<double> scratch(theta_.size(), 0.0);
    return unpack(backward(pack(v), tape, scratch), 0);
}

Image HourglassNet::input_jvp(const Image& y, const Image& t) const
{
    Tape tape;
    return unpack(forward(pack(y, t), PassMode::tangent, tape), 1);
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'D', 'I', 'P', 'S', 'T', 'O', 'P', 'N'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::vector<char>& out, const T& v)
{
    const char* p = reinterpret_cast<const char*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const char>& in)
{
    if (in.size() < sizeof(T)) throw IoError("checkpoint: truncated");
    T v;
    std::memcpy(&v, in.data(), sizeof(T));
    in = in.subspan(sizeof(T));
    return v;
}

}  // namespace

std::vector<char> HourglassNet::serialize() const
{
    const nlohmann::json header = {
        {"depth", spec_.depth},
        {"channels", spec_.channels},
        {"skip_channels", spec_.skip_channels},
        {"activation", to_string(spec_.activation)},
        {"upsample", to_string(spec_.upsample)},
        {"norm", to_string(spec_.norm)},
        {"image_channels", channels_},
        {"seed", seed_},
    };
    const std::string text = header.dump();
    std::vector<char> out(std::begin(kMagic), std::end(kMagic));
    put(out, kFormatVersion);
    put(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    put(out, static_cast<std::uint64_t>(theta_.size()));
    const char* p = reinterpret_cast<const char*>(theta_.data());
    out.insert(out.end(), p, p + theta_.size() * sizeof(double));
    return out;
}

HourglassNet HourglassNet::deserialize(std::span<const char> bytes)
{
    if (bytes.size() < sizeof(kMagic) || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
        throw IoError("checkpoint: bad magic");
    bytes = bytes.subspan(sizeof(kMagic));
    const auto version = take<std::uint32_t>(bytes);
    if (version != kFormatVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const auto len = take<std::uint32_t>(bytes);
    if (bytes.size() < len) throw IoError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin(), bytes.begin() + len);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: bad header: ") + e.what());
    }
    bytes = bytes.subspan(len);
    ArchSpec spec;
    try {
        spec.depth = header.at("depth").get<int>();
        spec.channels = header.at("channels").get<std::vector<int>>();
        spec.skip_channels = header.at("skip_channels").get<std::vector<int>>();
        spec.activation = parse_activation(header.at("activation").get<std::string>());
        spec.upsample = parse_upsample(header.at("upsample").get<std::string>());
        spec.norm = parse_norm(header.at("norm").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: bad header: ") + e.what());
    }
    HourglassNet net = init(spec, header.at("image_channels").get<int>(), header.at("seed").get<std::uint64_t>());
    const auto n = take<std::uint64_t>(bytes);
    if (n != net.theta_.size() || bytes.size() != n * sizeof(double))
        throw IoError("checkpoint: parameter count does not match the architecture");
    std::memcpy(net.theta_.data(), bytes.data(), n * sizeof(double));
    return net;
}

void HourglassNet::save(const std::filesystem::path& path) const
{
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

HourglassNet HourglassNet::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace dipstop
