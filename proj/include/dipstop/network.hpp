#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dipstop/image.hpp"
#include "dipstop/tensor.hpp"

namespace dipstop {

enum class Activation { leaky_relu, softplus };
enum class Upsample { bilinear, nearest };
enum class Norm { batch, none };

std::string to_string(Activation a);
std::string to_string(Upsample u);
std::string to_string(Norm n);
Activation parse_activation(std::string_view s);
Upsample parse_upsample(std::string_view s);
Norm parse_norm(std::string_view s);

/// Hourglass architecture. Level i downsamples by a stride-2 convolution to
/// `channels[i]` features, recurses, upsamples back and fuses with a
/// `skip_channels[i]`-wide skip branch taken from the level input.
struct ArchSpec {
    int depth = 4;
    std::vector<int> channels{32, 64, 64, 128};
    std::vector<int> skip_channels{4, 4, 4, 4};
    Activation activation = Activation::leaky_relu;
    Upsample upsample = Upsample::bilinear;
    Norm norm = Norm::batch;

    /// Throws ConfigError.
    void validate() const;
    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// How the batch items of a tensor are interpreted during a pass.
///
/// `independent`: every item is an input of its own.
/// `tangent`: item 0 is the primal input and item 1 a tangent direction, so
/// the pass returns h(x) and the Jacobian-vector product J(x) t.
enum class PassMode { independent, tangent };

struct LayerCache;

/// Per-evaluation scratch memory. A network is read-only during forward and
/// backward; all state lives here, so concurrent passes with separate tapes are safe.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(Tape&&) noexcept;
    Tape& operator=(Tape&&) noexcept;

private:
    friend class HourglassNet;
    std::vector<LayerCache> caches_;
    PassMode mode_ = PassMode::independent;
    int in_height_ = 0, in_width_ = 0;
};

class Layer;

/// Shape-preserving encoder-decoder h(.; theta), differentiable with respect
/// to both its input and its flat parameter vector. No stochastic layers;
/// normalization always uses the statistics of the current input.
class HourglassNet {
public:
    /// Deterministic initialization for a fixed (spec, channels, seed).
    /// Throws ConfigError for an invalid spec or channel count.
    static HourglassNet init(const ArchSpec& spec, int channels_in_out, std::uint64_t seed);

    const ArchSpec& spec() const { return spec_; }
    int channels() const { return channels_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t num_params() const { return theta_.size(); }
    std::span<const double> theta() const { return theta_; }
    std::span<double> theta() { return theta_; }

    /// Input sides are mirror-padded up to a multiple of 2^depth (and at
    /// least 4 * 2^depth) and the output is cropped back. Throws ShapeError on a channel mismatch.
    Image forward(const Image& input) const;

    /// Batched pass. The input tensor has `channels()` channels; in tangent
    /// mode its batch must be 2.
    Tensor forward(const Tensor& input, PassMode mode, Tape& tape) const;

    /// Reverse pass for the most recent forward on `tape`. Accumulates into
    /// `grad_theta` (size num_params()) and returns the input gradient.
    Tensor backward(const Tensor& grad_output, Tape& tape, std::span<double> grad_theta) const;

    /// J(y)^T v by reverse mode.
    Image input_vjp(const Image& y, const Image& v) const;
    /// J(y) t by forward mode.
    Image input_jvp(const Image& y, const Image& t) const;

    /// Self-describing checkpoint: magic, format version, spec, channels, seed, theta.
    std::vector<char> serialize() const;
    static HourglassNet deserialize(std::span<const char> bytes);
    void save(const std::filesystem::path& path) const;
    static HourglassNet load(const std::filesystem::path& path);

private:
    struct Level {
        std::vector<int> down;
        std::vector<int> skip;
        int upsample = -1;
        std::vector<int> decode;
    };

    HourglassNet() = default;
    void build();
    Tensor run_level(int level, const Tensor& x, PassMode mode, Tape& tape) const;
    Tensor back_level(int level, const Tensor& g, Tape& tape, std::span<double> grad) const;
    Tensor run_seq(const std::vector<int>& ids, Tensor x, PassMode mode, Tape& tape) const;
    Tensor back_seq(const std::vector<int>& ids, Tensor g, Tape& tape, std::span<double> grad) const;

    ArchSpec spec_;
    int channels_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> theta_;
    std::vector<std::shared_ptr<const Layer>> layers_;
    std::vector<Level> levels_;
    int head_ = -1;
};

/// Mirror index without edge repetition (…2 1 0 1 2…), valid for any offset.
int mirror_index(int i, int n);

}  // namespace dipstop
