#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "dipstop/errors.hpp"
#include "dipstop/metrics.hpp"
#include "dipstop/noise.hpp"
#include "dipstop/optimizer.hpp"
#include "dipstop/phantom.hpp"
#include "dipstop/risk.hpp"
#include "dipstop/rng.hpp"
#include "test_support.hpp"

using namespace dipstop;

namespace {

constexpr double kSigma = 25.0 / 255.0;

ArchSpec small_spec(Activation act = Activation::leaky_relu)
{
    ArchSpec spec;
    spec.depth = 2;
    spec.channels = {8, 8};
    spec.skip_channels = {2, 2};
    spec.activation = act;
    return spec;
}

RunConfig gaussian_cfg(Objective o, int iters, std::uint64_t seed = 3)
{
    RunConfig cfg;
    cfg.objective = o;
    cfg.sigma = kSigma;
    cfg.max_iters = iters;
    cfg.seed = seed;
    return cfg;
}

std::uint64_t iteration_seed(std::uint64_t seed, int it)
{
    return derive_seed(seed, stream::kIteration, static_cast<std::uint64_t>(it));
}

void expect_same_records(const RunTrace& a, const RunTrace& b)
{
    ASSERT_EQ(a.records.size(), b.records.size());
    EXPECT_EQ(a.stop_iter, b.stop_iter);
    EXPECT_EQ(a.stop_reason, b.stop_reason);
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.objective, b.objective);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const auto &p = a.records[i], &q = b.records[i];
        EXPECT_EQ(p.iter, q.iter);
        EXPECT_EQ(p.total_loss, q.total_loss);
        EXPECT_EQ(p.data_fidelity, q.data_fidelity);
        EXPECT_EQ(p.divergence_term, q.divergence_term);
        EXPECT_EQ(p.df_mc, q.df_mc);
        EXPECT_EQ(p.psnr_to_y, q.psnr_to_y);
        EXPECT_EQ(p.psnr_to_x, q.psnr_to_x);
        EXPECT_EQ(p.psnr_ema_to_x, q.psnr_ema_to_x);
        EXPECT_EQ(p.df_gt, q.df_gt);
    }
}

}  // namespace

TEST(Ema, Examples)
{
    const Image zeros(8, 8, 1), ones(8, 8, 1, 1.0);
    const Image r = testing_support::random_image(8, 8, 1, 1);
    EXPECT_EQ(ema_update(zeros, r, 0.0), r);
    EXPECT_EQ(ema_update(r, r, 0.7), r);
    const Image e = ema_update(zeros, ones, 0.99);
    for (double v : e.data()) EXPECT_NEAR(v, 0.01, 1e-15);
    EXPECT_EQ(ema_update(Image{}, r, 0.99), r);
    EXPECT_THROW(ema_update(zeros, ones, 1.0), DomainError);
    EXPECT_THROW(ema_update(zeros, ones, -0.1), DomainError);
}

TEST(ZeroCrossing, Examples)
{
    const std::vector<double> a{0.5, 0.2, -0.1}, b{0.5, 0.2, 0.1}, c{0.5, -0.6, 0.5, -0.5};
    EXPECT_EQ(zero_crossing_index(a, 1), 2);
    EXPECT_EQ(zero_crossing_index(b, 1), std::nullopt);
    EXPECT_EQ(zero_crossing_index(c, 2), 1);
    EXPECT_EQ(zero_crossing_index(std::vector<double>{}, 1), std::nullopt);
    EXPECT_EQ(zero_crossing_index(std::vector<double>{0.0}, 1), 0);
    EXPECT_THROW(zero_crossing_index(a, 0), DomainError);
}

TEST(RAdam, MatchesReferenceTrajectory)
{
    // Reference values from an independent RAdam implementation on
    // f(p) = sum w (p - c)^2 + 0.1 sum p^4 with default hyper-parameters.
    std::vector<double> p{1.0, -2.0, 0.5};
    const double c[] = {0.3, 0.1, -0.7}, w[] = {1.0, 3.0, 0.5};
    RAdam opt(3, 0.1);
    const std::map<int, std::vector<double>> expected{
        {1, {0.82000000000000006, -0.41999999999999993, 0.375}},
        {4, {0.43501243148534879, 1.1630457798317064, 0.046443167137186103}},
        {5, {0.34740775345301084, 1.1287707967243819, -0.049093768849115454}},
        {6, {0.34555980832040761, 1.1282244359121572, -0.051518401725403479}},
        {12, {0.33126470499061672, 1.1131176478379552, -0.076558897012118474}}};
    for (int t = 1; t <= 12; ++t) {
        std::vector<double> g(3);
        for (int i = 0; i < 3; ++i) g[i] = 2.0 * w[i] * (p[i] - c[i]) + 0.4 * p[i] * p[i] * p[i];
        opt.step(p, g);
        if (auto it = expected.find(t); it != expected.end()) {
            for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], it->second[i], 1e-14) << "step " << t;
        }
    }
}

TEST(RunConfigTest, Validation)
{
    RunConfig cfg = gaussian_cfg(Objective::ste, 10);
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_DOUBLE_EQ(cfg.effective_b(), kSigma);
    cfg.b = 0.02;
    EXPECT_DOUBLE_EQ(cfg.effective_b(), 0.02);
    auto bad = [&](auto mutate) {
        RunConfig c = gaussian_cfg(Objective::ste, 10);
        mutate(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    bad([](RunConfig& c) { c.sigma = 0.0; });
    bad([](RunConfig& c) { c.max_iters = 0; });
    bad([](RunConfig& c) { c.ema_beta = 1.0; });
    bad([](RunConfig& c) { c.stop_window = 0; });
    bad([](RunConfig& c) { c.lr = 0.0; });
    bad([](RunConfig& c) { c.b = -1.0; });
    bad([](RunConfig& c) { c.objective = Objective::pure; });
    EXPECT_EQ(parse_objective("dip_sure"), Objective::dip_sure);
    EXPECT_THROW(parse_objective("sure"), ConfigError);
}

TEST(Optimize, FirstLossMatchesRiskEstimators)
{
    // The loop evaluates the divergence by forward mode; the risk module uses reverse mode.
    const auto net0 = HourglassNet::init(small_spec(), 1, 5);
    const Image x = generate_phantom(PhantomKind::disks, 16, 16, 1, 1);
    const Image y = add_gaussian_noise(x, kSigma, 2);
    const NetworkMap h(net0);

    for (Objective o : {Objective::ste, Objective::dip_sure}) {
        auto net = net0;
        const RunConfig cfg = gaussian_cfg(o, 1, 9);
        const auto res = optimize(net, y, cfg);
        const double b = o == Objective::ste ? kSigma : 0.0;
        const auto ref = ste_loss(h, y, kSigma, b, iteration_seed(9, 0));
        const auto& r = res.trace.records.front();
        EXPECT_NEAR(r.total_loss, ref.total, 1e-12);
        EXPECT_NEAR(r.data_fidelity, ref.data_fidelity, 1e-15);
        EXPECT_NEAR(*r.df_mc, ref.df_mc, 1e-10);
    }

    const Image yp = add_poisson_noise(x, 0.1, 3);
    auto net = net0;
    RunConfig cfg;
    cfg.objective = Objective::pure;
    cfg.zeta = 0.1;
    cfg.max_iters = 1;
    cfg.seed = 4;
    const auto res = optimize(net, yp, cfg);
    const auto ref = pure_loss(h, yp, 0.1, cfg.eps,
                               ProbeVector::draw(yp.shape(), ProbeDistribution::rademacher, iteration_seed(4, 0)));
    EXPECT_NEAR(res.trace.records.front().total_loss, ref.total, 1e-12);
    EXPECT_NEAR(*res.trace.records.front().df_mc, ref.df_mc, 1e-9);
}

TEST(Optimize, ObjectiveGradientMatchesFiniteDifferences)
{
    // The loss at iteration 0 as a function of theta, with the iteration randomness fixed.
    auto net = HourglassNet::init(small_spec(Activation::softplus), 1, 6);
    const Image y = add_gaussian_noise(generate_phantom(PhantomKind::disks, 16, 16, 1, 2), kSigma, 3);
    const RunConfig cfg = gaussian_cfg(Objective::ste, 2, 11);
    const std::vector<double> base(net.theta().begin(), net.theta().end());

    auto loss0 = [&](const std::vector<double>& theta) {
        auto n = net;
        std::copy(theta.begin(), theta.end(), n.theta().begin());
        return optimize(n, y, gaussian_cfg(Objective::ste, 1, 11)).trace.records.front().total_loss;
    };
    // One RAdam step (t = 1) moves theta by -lr * g exactly.
    auto stepped = net;
    optimize(stepped, y, cfg);
    std::vector<double> g(base.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (base[i] - stepped.theta()[i]) / cfg.lr;

    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal;
    std::vector<double> dir(base.size());
    for (double& d : dir) d = normal(rng);
    double analytic = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) analytic += g[i] * dir[i];
    const double eps = 1e-6;
    std::vector<double> plus = base, minus = base;
    for (std::size_t i = 0; i < base.size(); ++i) plus[i] += eps * dir[i], minus[i] -= eps * dir[i];
    const double fd = (loss0(plus) - loss0(minus)) / (2.0 * eps);
    EXPECT_NEAR(analytic, fd, 1e-4 * std::max(1.0, std::abs(fd)));
}

TEST(Optimize, MaxItersContract)
{
    auto net = HourglassNet::init(small_spec(), 1, 1);
    const Image y = add_gaussian_noise(generate_phantom(PhantomKind::disks, 16, 16, 1, 1), kSigma, 1);
    for (Objective o : {Objective::dip, Objective::dip_sure, Objective::ste}) {
        auto n = net;
        const auto res = optimize(n, y, gaussian_cfg(o, 5));
        EXPECT_LE(res.trace.records.size(), 5u);
        EXPECT_LE(res.trace.stop_iter, 5);
        for (std::size_t i = 1; i < res.trace.records.size(); ++i)
            EXPECT_GT(res.trace.records[i].iter, res.trace.records[i - 1].iter);
        EXPECT_EQ(res.output_last.shape(), y.shape());
        EXPECT_EQ(res.output_ema.shape(), y.shape());
    }
}

TEST(Optimize, CleanConstantImageStopsByZeroCrossing)
{
    auto net = HourglassNet::init(small_spec(), 1, 2);
    const Image y(32, 32, 1, 0.5);
    RunConfig cfg = gaussian_cfg(Objective::ste, 2000);
    cfg.sigma = 1e-4;
    const auto res = optimize(net, y, cfg);
    EXPECT_EQ(res.trace.stop_reason, StopReason::zero_crossing);
    EXPECT_LT(res.trace.stop_iter, 2000);
}

TEST(Optimize, StoppingIsSoundForWindows)
{
    const auto net0 = HourglassNet::init(small_spec(), 1, 3);
    const Image x = generate_phantom(PhantomKind::disks, 16, 16, 1, 4);
    const Image y = add_gaussian_noise(x, kSigma, 5);
    for (int window : {1, 3}) {
        auto net = net0;
        RunConfig cfg = gaussian_cfg(Objective::ste, 1500);
        cfg.stop_window = window;
        const auto res = optimize(net, y, cfg, &x);
        std::vector<double> losses;
        for (const auto& r : res.trace.records) losses.push_back(r.total_loss);
        const auto idx = zero_crossing_index(losses, window);
        EXPECT_EQ(res.trace.stop_reason == StopReason::zero_crossing, idx.has_value());
        if (idx) {
            EXPECT_EQ(*idx, res.trace.stop_iter);
        }
    }
}

TEST(Optimize, DeterministicTraces)
{
    const auto net0 = HourglassNet::init(small_spec(), 1, 7);
    const Image x = generate_phantom(PhantomKind::text_like, 16, 16, 1, 4);
    const Image y = add_gaussian_noise(x, kSigma, 5);
    for (Objective o : {Objective::ste, Objective::dip}) {
        auto a = net0, b = net0;
        const auto ra = optimize(a, y, gaussian_cfg(o, 40), &x);
        const auto rb = optimize(b, y, gaussian_cfg(o, 40), &x);
        expect_same_records(ra.trace, rb.trace);
        EXPECT_EQ(ra.output_ema, rb.output_ema);
        EXPECT_TRUE(std::equal(a.theta().begin(), a.theta().end(), b.theta().begin()));
    }
}

TEST(Optimize, GroundTruthColumnsAndPeak)
{
    auto net = HourglassNet::init(small_spec(), 1, 8);
    const Image x = generate_phantom(PhantomKind::disks, 16, 16, 1, 4);
    const Image y = add_gaussian_noise(x, kSigma, 5);
    const auto res = optimize(net, y, gaussian_cfg(Objective::ste, 30), &x);
    ASSERT_TRUE(res.trace.has_ground_truth());
    double best = -1e300;
    for (const auto& r : res.trace.records) {
        ASSERT_TRUE(r.psnr_to_x && r.df_gt && r.df_mc && r.psnr_ema_to_x);
        best = std::max(best, *r.psnr_to_x);
    }
    ASSERT_TRUE(res.output_peak);
    EXPECT_DOUBLE_EQ(psnr(*res.output_peak, x), best);
    EXPECT_DOUBLE_EQ(psnr(res.output_ema, x), *res.trace.records.back().psnr_ema_to_x);

    auto n2 = HourglassNet::init(small_spec(), 1, 8);
    const auto plain = optimize(n2, y, gaussian_cfg(Objective::ste, 3));
    EXPECT_FALSE(plain.trace.has_ground_truth());
    EXPECT_FALSE(plain.output_peak);
}

TEST(Optimize, NonFiniteInputAborts)
{
    auto net = HourglassNet::init(small_spec(), 1, 8);
    Image y(16, 16, 1, 0.5);
    y.at(0, 3, 3) = std::nan("");
    try {
        optimize(net, y, gaussian_cfg(Objective::ste, 10));
        FAIL() << "expected NonFiniteError";
    } catch (const NonFiniteError& e) {
        EXPECT_TRUE(e.trace().records.empty());
    }
}

TEST(BaselineDip, RequiresGroundTruth)
{
    auto net = HourglassNet::init(small_spec(), 1, 8);
    const Image y(16, 16, 1, 0.5);
    EXPECT_THROW(run_baseline_dip(net, y, gaussian_cfg(Objective::dip, 5), nullptr), ConfigError);
}

TEST(BaselineDip, NoiselessFitKeepsImproving)
{
    auto net = HourglassNet::init(small_spec(), 1, 9);
    const Image x = generate_phantom(PhantomKind::disks, 32, 32, 1, 6);
    RunConfig cfg = gaussian_cfg(Objective::dip, 600);
    cfg.sigma = 0.0;
    const auto res = run_baseline_dip(net, x, cfg, &x);
    const auto& rec = res.trace.records;
    EXPECT_EQ(res.trace.stop_reason, StopReason::max_iters);
    EXPECT_EQ(static_cast<int>(rec.size()), 600);
    // Trend: the last hundred iterations beat the first hundred and still reach the peak.
    double early = 0.0, late = 0.0, late_best = -1e300;
    for (int i = 0; i < 100; ++i) {
        early += *rec[i].psnr_to_x;
        late += *rec[rec.size() - 1 - i].psnr_to_x;
        late_best = std::max(late_best, *rec[rec.size() - 1 - i].psnr_to_x);
    }
    EXPECT_GT(late, early);
    EXPECT_GT(late_best, psnr(*res.output_peak, x) - 1.0);
}

TEST(BaselineDip, FixedNoiseInputIsSeeded)
{
    const auto net0 = HourglassNet::init(small_spec(), 1, 10);
    const Image x = generate_phantom(PhantomKind::disks, 16, 16, 1, 6);
    const Image y = add_gaussian_noise(x, kSigma, 1);
    RunConfig cfg = gaussian_cfg(Objective::dip, 3);
    auto a = net0, b = net0, c = net0;
    const auto ra = run_baseline_dip(a, y, cfg, &x);
    const auto rb = run_baseline_dip(b, y, cfg, &x);
    cfg.baseline_input = BaselineInput::noisy_image;
    const auto rc = run_baseline_dip(c, y, cfg, &x);
    EXPECT_EQ(ra.output_last, rb.output_last);
    EXPECT_FALSE(ra.output_last == rc.output_last);
    EXPECT_FALSE(ra.trace.records.front().df_mc.has_value());
}

TEST(TraceIo, RoundTrips)
{
    auto net = HourglassNet::init(small_spec(), 1, 11);
    const Image x = generate_phantom(PhantomKind::disks, 16, 16, 1, 4);
    const Image y = add_gaussian_noise(x, kSigma, 5);
    auto trace = optimize(net, y, gaussian_cfg(Objective::ste, 20), &x).trace;
    trace.label = "ste run";
    trace.records[2].psnr_to_y = kPsnrCap;

    std::stringstream nd;
    write_trace_ndjson(nd, trace);
    expect_same_records(read_trace_ndjson(nd), trace);

    std::stringstream csv;
    write_trace_csv(csv, trace);
    expect_same_records(read_trace_csv(csv), trace);

    auto dip_net = HourglassNet::init(small_spec(), 1, 11);
    const auto dip = optimize(dip_net, y, gaussian_cfg(Objective::dip, 4)).trace;
    std::stringstream csv2;
    write_trace_csv(csv2, dip);
    const auto back = read_trace_csv(csv2);
    expect_same_records(back, dip);
    EXPECT_FALSE(back.records.front().df_mc.has_value());

    std::stringstream junk("{not json");
    EXPECT_THROW(read_trace_ndjson(junk), IoError);
}
