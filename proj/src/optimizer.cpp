#include "dipstop/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "dipstop/metrics.hpp"
#include "dipstop/risk.hpp"
#include "dipstop/rng.hpp"

namespace dipstop {

std::string to_string(Objective o)
{
    switch (o) {
    case Objective::dip: return "dip";
    case Objective::dip_sure: return "dip_sure";
    case Objective::ste: return "ste";
    case Objective::pure: return "pure";
    }
    return "?";
}

std::string to_string(BaselineInput b) { return b == BaselineInput::noisy_image ? "noisy_image" : "fixed_noise"; }
std::string to_string(StopReason r) { return r == StopReason::zero_crossing ? "zero_crossing" : "max_iters"; }

Objective parse_objective(std::string_view s)
{
    if (s == "dip") return Objective::dip;
    if (s == "dip_sure") return Objective::dip_sure;
    if (s == "ste") return Objective::ste;
    if (s == "pure") return Objective::pure;
    throw ConfigError("unknown objective '" + std::string(s) + "'");
}

BaselineInput parse_baseline_input(std::string_view s)
{
    if (s == "noisy_image") return BaselineInput::noisy_image;
    if (s == "fixed_noise") return BaselineInput::fixed_noise;
    throw ConfigError("unknown baseline input '" + std::string(s) + "'");
}

StopReason parse_stop_reason(std::string_view s)
{
    if (s == "zero_crossing") return StopReason::zero_crossing;
    if (s == "max_iters") return StopReason::max_iters;
    throw ConfigError("unknown stop reason '" + std::string(s) + "'");
}

void RunConfig::validate() const
{
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(ema_beta >= 0.0 && ema_beta < 1.0)) throw ConfigError("ema_beta must be in [0, 1)");
    if (stop_window < 1) throw ConfigError("stop_window must be >= 1");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
    if (b && !(*b >= 0.0)) throw ConfigError("b must be >= 0");
    switch (objective) {
    case Objective::dip: break;
    case Objective::dip_sure:
    case Objective::ste:
        if (!(sigma > 0.0)) throw ConfigError(to_string(objective) + " requires sigma > 0");
        break;
    case Objective::pure:
        if (!(zeta > 0.0)) throw ConfigError("pure requires zeta > 0");
        if (!(eps > 0.0)) throw ConfigError("pure requires eps > 0");
        break;
    }
}

const Image& DenoiseResult::reported() const
{
    const Objective o = trace.objective;
    return o == Objective::ste || o == Objective::pure ? output_ema : output_last;
}

Image ema_update(const Image& prev, const Image& next, double beta)
{
    if (!(beta >= 0.0 && beta < 1.0)) throw DomainError("ema_update: beta must be in [0, 1)");
    if (prev.empty()) return next;
    require_same_shape(prev, next, "ema_update");
    Image out = prev;
    auto o = out.data();
    auto n = next.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = beta * o[i] + (1.0 - beta) * n[i];
    return out;
}

std::optional<int> zero_crossing_index(std::span<const double> losses, int window)
{
    if (window < 1) throw DomainError("zero_crossing_index: window must be >= 1");
    const int n = static_cast<int>(losses.size());
    for (int i = window - 1; i < n; ++i) {
        double sum = 0.0;
        for (int k = i - window + 1; k <= i; ++k) sum += losses[k];
        if (sum / window <= 0.0) return i;
    }
    return std::nullopt;
}

RAdam::RAdam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0)
{
}

void RAdam::step(std::span<double> params, std::span<const double> grad)
{
    ++t_;
    const double b1t = std::pow(beta1_, t_);
    const double b2t = std::pow(beta2_, t_);
    const double rho_inf = 2.0 / (1.0 - beta2_) - 1.0;
    const double rho_t = rho_inf - 2.0 * t_ * b2t / (1.0 - b2t);
    const double step_size = lr_ / (1.0 - b1t);
    double rect = 0.0;
    const bool adaptive = rho_t > 5.0;
    if (adaptive)
        rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    const double bias2 = std::sqrt(1.0 - b2t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        if (adaptive)
            params[i] -= step_size * rect * m_[i] * bias2 / (std::sqrt(v_[i]) + eps_);
        else
            params[i] -= step_size * m_[i];
    }
}

namespace {

// Pointwise scaled difference 2 (a - b) / n as a one-item tensor.
void fill_mse_grad(double* dst, const Image& a, const Image& b, double n)
{
    const auto pa = a.data(), pb = b.data();
    const int c = a.channels();
    const std::size_t plane = a.shape().plane_size();
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) dst[ch * plane + i] = 2.0 * (pa[ch * plane + i] - pb[ch * plane + i]) / n;
}

struct IterationResult {
    Image output;
    RiskEstimate risk;
    bool has_df_mc = true;
};

class Runner {
public:
    Runner(HourglassNet& net, const Image& y, const RunConfig& cfg, const Image* x)
        : net_(net), y_(y), cfg_(cfg), x_(x), n_(static_cast<double>(y.size())), grad_(net.num_params()),
          adam_(net.num_params(), cfg.lr)
    {
        if (cfg_.objective == Objective::dip) {
            if (cfg_.baseline_input == BaselineInput::fixed_noise) {
                input_ = Image::zeros_like(y);
                Rng rng = make_rng(cfg_.seed, stream::kFixedInput);
                std::uniform_real_distribution<double> u(0.0, 0.1);
                for (double& v : input_.data()) v = u(rng);
            } else {
                input_ = y;
            }
        }
    }

    DenoiseResult run()
    {
        DenoiseResult result;
        result.trace.objective = cfg_.objective;
        result.trace.label = to_string(cfg_.objective);
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> losses;

        for (int it = 0; it < cfg_.max_iters; ++it) {
            std::fill(grad_.begin(), grad_.end(), 0.0);
            IterationResult r = evaluate(it);
            if (!std::isfinite(r.risk.total) || !all_finite(grad_)) {
                result.trace.stop_iter = result.trace.records.empty() ? 0 : result.trace.records.back().iter;
                throw NonFiniteError("non-finite loss or gradient at iteration " + std::to_string(it),
                                     std::move(result.trace));
            }

            result.output_ema = ema_update(result.output_ema, r.output, cfg_.ema_beta);

            TraceRecord rec;
            rec.iter = it;
            rec.total_loss = r.risk.total;
            rec.data_fidelity = r.risk.data_fidelity;
            rec.divergence_term = r.risk.divergence_term;
            if (r.has_df_mc) rec.df_mc = r.risk.df_mc;
            rec.psnr_to_y = psnr(r.output, y_, false);
            if (x_) {
                rec.psnr_to_x = psnr(r.output, *x_);
                rec.psnr_ema_to_x = psnr(result.output_ema, *x_);
                if (cfg_.objective != Objective::pure && cfg_.sigma > 0.0)
                    rec.df_gt = df_gt(r.output, *x_, y_, cfg_.sigma);
                if (*rec.psnr_to_x > best) {
                    best = *rec.psnr_to_x;
                    result.output_peak = r.output;
                    result.peak_iter = it;
                }
            }
            result.trace.records.push_back(rec);
            losses.push_back(r.risk.total);
            result.output_last = std::move(r.output);

            if (cfg_.objective != Objective::dip && crossed(losses)) {
                result.trace.stop_iter = it;
                result.trace.stop_reason = StopReason::zero_crossing;
                return result;
            }
            if (it + 1 < cfg_.max_iters) adam_.step(net_.theta(), grad_);
        }
        result.trace.stop_iter = cfg_.max_iters - 1;
        result.trace.stop_reason = StopReason::max_iters;
        return result;
    }

private:
    static bool all_finite(const std::vector<double>& v)
    {
        for (double d : v)
            if (!std::isfinite(d)) return false;
        return true;
    }

    bool crossed(const std::vector<double>& losses) const
    {
        const int w = cfg_.stop_window;
        if (static_cast<int>(losses.size()) < w) return false;
        double sum = 0.0;
        for (std::size_t k = losses.size() - w; k < losses.size(); ++k) sum += losses[k];
        return sum / w <= 0.0;
    }

    IterationResult evaluate(int it)
    {
        const std::uint64_t iter_seed = derive_seed(cfg_.seed, stream::kIteration, static_cast<std::uint64_t>(it));
        switch (cfg_.objective) {
        case Objective::dip: return evaluate_dip();
        case Objective::dip_sure: return evaluate_gaussian(draw_ste(y_.shape(), 0.0, iter_seed));
        case Objective::ste: return evaluate_gaussian(draw_ste(y_.shape(), cfg_.effective_b(), iter_seed));
        case Objective::pure:
            return evaluate_pure(ProbeVector::draw(y_.shape(), ProbeDistribution::rademacher, iter_seed));
        }
        throw ConfigError("unknown objective");
    }

    IterationResult evaluate_dip()
    {
        const Tensor out = net_.forward(pack(input_), PassMode::independent, tape_);
        IterationResult r;
        r.output = unpack(out, 0);
        r.has_df_mc = false;
        r.risk.data_fidelity = mse(r.output, y_);
        r.risk.total = r.risk.data_fidelity;
        Tensor g(out.channels, 1, out.height, out.width);
        fill_mse_grad(g.data.data(), r.output, y_, n_);
        net_.backward(g, tape_, grad_);
        return r;
    }

    // Divergence by a tangent pass: item 1 of the output is J(y2) n.
    IterationResult evaluate_gaussian(const SteDraw& draw)
    {
        const Image y2 = y_ + draw.gamma;
        const Tensor out = net_.forward(pack(y2, draw.probe.values), PassMode::tangent, tape_);
        IterationResult r;
        r.output = unpack(out, 0);
        const double div = dot(draw.probe.values, unpack(out, 1)) / n_;
        const double s2 = cfg_.sigma * cfg_.sigma;
        r.risk.data_fidelity = mse(y_, r.output);
        r.risk.divergence_term = 2.0 * s2 * div;
        r.risk.constant_offset = s2;
        r.risk.total = r.risk.data_fidelity + r.risk.divergence_term - r.risk.constant_offset;
        r.risk.df_mc = div;

        Tensor g(out.channels, 2, out.height, out.width);
        const std::size_t plane = y_.shape().plane_size();
        std::vector<double> tmp(y_.size());
        fill_mse_grad(tmp.data(), r.output, y_, n_);
        for (int c = 0; c < out.channels; ++c) {
            std::copy_n(tmp.data() + c * plane, plane, g.plane_ptr(c, 0));
            const auto probe = draw.probe.values.plane(c);
            double* dst = g.plane_ptr(c, 1);
            for (std::size_t i = 0; i < plane; ++i) dst[i] = 2.0 * s2 * probe[i] / n_;
        }
        net_.backward(g, tape_, grad_);
        return r;
    }

    IterationResult evaluate_pure(const ProbeVector& probe)
    {
        const double eps = cfg_.eps, zeta = cfg_.zeta;
        const Image shifted = y_ + eps * Image(probe.values);
        const Tensor out = net_.forward(pack(y_, shifted), PassMode::independent, tape_);
        IterationResult r;
        r.output = unpack(out, 0);
        const Image hp = unpack(out, 1);
        const auto p = probe.values.data(), yy = y_.data(), a = hp.data();
        const std::span<const double> b = r.output.data();
        double acc = 0.0, acc_plain = 0.0;
        for (std::size_t i = 0; i < yy.size(); ++i) {
            const double diff = p[i] * (a[i] - b[i]);
            acc += yy[i] * diff;
            acc_plain += diff;
        }
        r.risk.data_fidelity = mse(r.output, y_);
        r.risk.divergence_term = 2.0 * zeta * acc / (eps * n_);
        r.risk.constant_offset = zeta * mean(y_);
        r.risk.total = r.risk.data_fidelity + r.risk.divergence_term - r.risk.constant_offset;
        r.risk.df_mc = acc_plain / (eps * n_);

        Tensor g(out.channels, 2, out.height, out.width);
        const std::size_t plane = y_.shape().plane_size();
        const double k = 2.0 * zeta / (eps * n_);
        for (int c = 0; c < out.channels; ++c) {
            double* g0 = g.plane_ptr(c, 0);
            double* g1 = g.plane_ptr(c, 1);
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t j = c * plane + i;
                const double w = k * p[j] * yy[j];
                g0[i] = 2.0 * (b[j] - yy[j]) / n_ - w;
                g1[i] = w;
            }
        }
        net_.backward(g, tape_, grad_);
        return r;
    }

    HourglassNet& net_;
    const Image& y_;
    const RunConfig& cfg_;
    const Image* x_;
    double n_;
    Image input_;
    Tape tape_;
    std::vector<double> grad_;
    RAdam adam_;
};

}  // namespace

DenoiseResult optimize(HourglassNet& net, const Image& y, const RunConfig& cfg, const Image* x)
{
    cfg.validate();
    if (y.channels() != net.channels()) throw ShapeError("optimize: image and network channel counts differ");
    if (x) require_same_shape(y, *x, "optimize");
    return Runner(net, y, cfg, x).run();
}

DenoiseResult run_baseline_dip(HourglassNet& net, const Image& y, RunConfig cfg, const Image* x)
{
    if (!x) throw ConfigError("run_baseline_dip requires the ground truth image");
    cfg.objective = Objective::dip;
    return optimize(net, y, cfg, x);
}

// ---------------------------------------------------------------- trace IO

namespace {

using nlohmann::json;

void put_optional(json& j, const char* key, const std::optional<double>& v)
{
    if (v) j[key] = *v;
}

std::optional<double> get_optional(const json& j, const char* key)
{
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
}

// JSON has no infinities; the PSNR cap is written as a string.
json number(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

double get_number(const json& j)
{
    if (j.is_string()) return j.get<std::string>() == "-inf" ? -kPsnrCap : kPsnrCap;
    return j.get<double>();
}

std::string fmt17(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::optional<double> parse_cell(const std::string& s)
{
    if (s.empty()) return std::nullopt;
    if (s == "inf") return kPsnrCap;
    if (s == "-inf") return -kPsnrCap;
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw IoError("trace csv: bad number '" + s + "'");
    return v;
}

}  // namespace

void write_trace_ndjson(std::ostream& out, const RunTrace& trace)
{
    json header{{"type", "header"},
                {"label", trace.label},
                {"objective", to_string(trace.objective)},
                {"stop_iter", trace.stop_iter},
                {"stop_reason", to_string(trace.stop_reason)}};
    out << header.dump() << '\n';
    for (const auto& r : trace.records) {
        json j{{"iter", r.iter},
               {"total_loss", r.total_loss},
               {"data_fidelity", r.data_fidelity},
               {"divergence_term", r.divergence_term},
               {"psnr_to_y", number(r.psnr_to_y)}};
        put_optional(j, "df_mc", r.df_mc);
        if (r.psnr_to_x) j["psnr_to_x"] = number(*r.psnr_to_x);
        if (r.psnr_ema_to_x) j["psnr_ema_to_x"] = number(*r.psnr_ema_to_x);
        put_optional(j, "df_gt", r.df_gt);
        out << j.dump() << '\n';
    }
}

RunTrace read_trace_ndjson(std::istream& in)
{
    RunTrace trace;
    std::string line;
    bool header = false;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            if (j.value("type", "") == "header") {
                trace.label = j.at("label").get<std::string>();
                trace.objective = parse_objective(j.at("objective").get<std::string>());
                trace.stop_iter = j.at("stop_iter").get<int>();
                trace.stop_reason = parse_stop_reason(j.at("stop_reason").get<std::string>());
                header = true;
                continue;
            }
            TraceRecord r;
            r.iter = j.at("iter").get<int>();
            r.total_loss = j.at("total_loss").get<double>();
            r.data_fidelity = j.at("data_fidelity").get<double>();
            r.divergence_term = j.at("divergence_term").get<double>();
            r.df_mc = get_optional(j, "df_mc");
            r.psnr_to_y = get_number(j.at("psnr_to_y"));
            if (j.contains("psnr_to_x")) r.psnr_to_x = get_number(j.at("psnr_to_x"));
            if (j.contains("psnr_ema_to_x")) r.psnr_ema_to_x = get_number(j.at("psnr_ema_to_x"));
            r.df_gt = get_optional(j, "df_gt");
            trace.records.push_back(r);
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("trace: malformed record: ") + e.what());
    } catch (const ConfigError& e) {
        throw IoError(std::string("trace: ") + e.what());
    }
    if (!header) throw IoError("trace: missing header line");
    return trace;
}

void write_trace_csv(std::ostream& out, const RunTrace& trace)
{
    out << "# label=" << trace.label << '\n'
        << "# objective=" << to_string(trace.objective) << '\n'
        << "# stop_iter=" << trace.stop_iter << '\n'
        << "# stop_reason=" << to_string(trace.stop_reason) << '\n'
        << "iter,total_loss,data_fidelity,divergence_term,df_mc,psnr_to_y,psnr_to_x,psnr_ema_to_x,df_gt\n";
    auto opt = [](const std::optional<double>& v) { return v ? fmt17(*v) : std::string(); };
    for (const auto& r : trace.records)
        out << r.iter << ',' << fmt17(r.total_loss) << ',' << fmt17(r.data_fidelity) << ','
            << fmt17(r.divergence_term) << ',' << opt(r.df_mc) << ',' << fmt17(r.psnr_to_y) << ','
            << opt(r.psnr_to_x) << ',' << opt(r.psnr_ema_to_x) << ',' << opt(r.df_gt) << '\n';
}

RunTrace read_trace_csv(std::istream& in)
{
    RunTrace trace;
    std::string line;
    bool columns = false;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (line.rfind("# ", 0) == 0) {
                const auto eq = line.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
                if (key == "label") trace.label = value;
                else if (key == "objective") trace.objective = parse_objective(value);
                else if (key == "stop_iter") trace.stop_iter = std::stoi(value);
                else if (key == "stop_reason") trace.stop_reason = parse_stop_reason(value);
                continue;
            }
            if (!columns) {
                if (line.rfind("iter,", 0) != 0) throw IoError("trace csv: missing column header");
                columns = true;
                continue;
            }
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            while (cells.size() < 9) cells.emplace_back();
            if (cells.size() != 9) throw IoError("trace csv: wrong number of cells");
            TraceRecord r;
            r.iter = std::stoi(cells[0]);
            r.total_loss = parse_cell(cells[1]).value();
            r.data_fidelity = parse_cell(cells[2]).value();
            r.divergence_term = parse_cell(cells[3]).value();
            r.df_mc = parse_cell(cells[4]);
            r.psnr_to_y = parse_cell(cells[5]).value();
            r.psnr_to_x = parse_cell(cells[6]);
            r.psnr_ema_to_x = parse_cell(cells[7]);
            r.df_gt = parse_cell(cells[8]);
            trace.records.push_back(r);
        }
    } catch (const std::logic_error& e) {
        throw IoError(std::string("trace csv: malformed value: ") + e.what());
    } catch (const ConfigError& e) {
        throw IoError(std::string("trace csv: ") + e.what());
    }
    if (!columns) throw IoError("trace csv: missing column header");
    return trace;
}

void save_trace(const std::filesystem::path& path, const RunTrace& trace)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    if (path.extension() == ".csv")
        write_trace_csv(out, trace);
    else
        write_trace_ndjson(out, trace);
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

RunTrace load_trace(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return path.extension() == ".csv" ? read_trace_csv(in) : read_trace_ndjson(in);
}

}  // namespace dipstop
