#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dipstop/diagnostics.hpp"
#include "dipstop/errors.hpp"

using namespace dipstop;

namespace {

RunTrace synthetic(Objective o, int n, double (*df)(int), double (*ps)(int), int stop, bool gt = true)
{
    RunTrace t;
    t.objective = o;
    t.label = to_string(o);
    for (int i = 0; i < n; ++i) {
        TraceRecord r;
        r.iter = i;
        r.total_loss = 0.01 - 1e-5 * i;
        r.data_fidelity = 0.01;
        r.divergence_term = 1e-3;
        if (o != Objective::dip) r.df_mc = 0.3;
        r.psnr_to_y = 20.0 + 0.001 * i;
        if (gt) {
            r.psnr_to_x = ps(i);
            r.psnr_ema_to_x = ps(i) - 0.1;
            r.df_gt = df(i);
        }
        t.records.push_back(r);
    }
    t.stop_iter = stop;
    t.stop_reason = o == Objective::dip ? StopReason::max_iters : StopReason::zero_crossing;
    return t;
}

RunTrace dip_ramp() { return synthetic(Objective::dip, 2000, [](int i) { return i / 1000.0; }, [](int i) { return 30.0 - std::abs(i - 750) / 100.0; }, 1999); }
RunTrace ste_flat() { return synthetic(Objective::ste, 1200, [](int) { return 0.8; }, [](int) { return 28.0; }, 1199); }

std::filesystem::path temp_path(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("dipstop_diag_" + name);
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count(const std::string& hay, const std::string& needle)
{
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

TEST(Bundle, SingleTrace)
{
    const auto b = build_bundle({ste_flat()});
    ASSERT_EQ(b.runs.size(), 1u);
    EXPECT_EQ(b.grid.size(), 1200u);
    EXPECT_EQ(b.runs[0].name, "ste");
    EXPECT_THROW(build_bundle({}), ArgumentError);
}

TEST(Bundle, UnionGridAndEndedRuns)
{
    const auto b = build_bundle({ste_flat(), dip_ramp()});
    EXPECT_EQ(b.grid.size(), 2000u);
    const auto& ste = b.runs[0];
    EXPECT_EQ(ste.end_iter, 1199);
    const auto& df = *ste.get(SeriesKind::df_gt);
    EXPECT_TRUE(df[1199].has_value());
    EXPECT_FALSE(df[1200].has_value());
    EXPECT_FALSE(b.runs[1].get(SeriesKind::df_mc).has_value());
}

TEST(Bundle, MissingGroundTruthSeriesAreAbsent)
{
    const auto t = synthetic(Objective::ste, 10, [](int) { return 0.0; }, [](int) { return 0.0; }, 9, false);
    const auto b = build_bundle({t});
    EXPECT_FALSE(b.runs[0].get(SeriesKind::df_gt).has_value());
    EXPECT_FALSE(b.runs[0].get(SeriesKind::psnr_to_x).has_value());
    EXPECT_TRUE(b.runs[0].get(SeriesKind::total_loss).has_value());
}

TEST(Bundle, DuplicateNamesAreNumbered)
{
    const auto b = build_bundle({ste_flat(), ste_flat(), ste_flat()});
    EXPECT_EQ(b.runs[0].name, "ste");
    EXPECT_EQ(b.runs[1].name, "ste#2");
    EXPECT_EQ(b.runs[2].name, "ste#3");
}

TEST(Crossing, ConstructedIntersection)
{
    const auto rep = crossing_report(build_bundle({dip_ramp(), ste_flat()}));
    ASSERT_TRUE(rep.intersection_iter);
    EXPECT_NEAR(*rep.intersection_iter, 800.0, 1e-9);
    EXPECT_EQ(rep.dip_peak_iter, 750);
    EXPECT_NEAR(*rep.gap, 50.0, 1e-9);
    EXPECT_NEAR(*rep.relative_gap, 50.0 / 750.0, 1e-12);
}

TEST(Crossing, InterpolatesBetweenGridPoints)
{
    auto dip = synthetic(Objective::dip, 10, [](int i) { return 0.1 * i; }, [](int i) { return double(i); }, 9);
    auto ste = synthetic(Objective::ste, 10, [](int) { return 0.45; }, [](int) { return 1.0; }, 9);
    const auto rep = crossing_report(build_bundle({dip, ste}));
    EXPECT_NEAR(*rep.intersection_iter, 4.5, 1e-12);
}

TEST(Crossing, EarlyTransientIsIgnored)
{
    // dip pokes above ste at i = 2..3, falls back, then crosses for good at 6.5.
    auto dip = synthetic(Objective::dip, 12, [](int i) {
        static const double v[] = {0.0, 0.2, 0.6, 0.6, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0};
        return v[i];
    }, [](int i) { return i == 7 ? 40.0 : 30.0; }, 11);
    auto ste = synthetic(Objective::ste, 12, [](int) { return 0.5; }, [](int) { return 30.0; }, 11);
    const auto rep = crossing_report(build_bundle({dip, ste}));
    ASSERT_TRUE(rep.intersection_iter);
    EXPECT_NEAR(*rep.intersection_iter, 6.5, 1e-12);
    EXPECT_EQ(rep.dip_peak_iter, 7);
}

TEST(Crossing, NoneWhenDipEndsBelow)
{
    auto dip = synthetic(Objective::dip, 10, [](int i) { return i < 5 ? 0.1 * i : 0.0; }, [](int) { return 1.0; }, 9);
    auto ste = synthetic(Objective::ste, 10, [](int) { return 0.25; }, [](int) { return 1.0; }, 9);
    const auto rep = crossing_report(build_bundle({dip, ste}));
    EXPECT_FALSE(rep.intersection_iter);
    EXPECT_FALSE(rep.gap);
}

TEST(Crossing, PermutationInvariant)
{
    const auto a = crossing_report(build_bundle({dip_ramp(), ste_flat()}));
    const auto b = crossing_report(build_bundle({ste_flat(), dip_ramp()}));
    EXPECT_EQ(a.intersection_iter, b.intersection_iter);
    EXPECT_EQ(a.dip_peak_iter, b.dip_peak_iter);
    EXPECT_EQ(a.gap, b.gap);
}

TEST(Crossing, Errors)
{
    EXPECT_THROW(crossing_report(build_bundle({ste_flat()})), CapabilityError);
    EXPECT_THROW(crossing_report(build_bundle({dip_ramp()})), CapabilityError);
    const auto no_gt = synthetic(Objective::ste, 10, [](int) { return 0.0; }, [](int) { return 0.0; }, 9, false);
    EXPECT_THROW(crossing_report(build_bundle({dip_ramp(), no_gt})), CapabilityError);
}

TEST(Curves, CsvRoundTrip)
{
    auto dip = dip_ramp();
    dip.records[3].psnr_to_x = 1.0 / 3.0;
    const auto b = build_bundle({dip, ste_flat()});
    const auto path = temp_path("rt.csv");
    export_curves(b, path, CurveFormat::csv);
    const auto back = import_curves_csv(path);
    const std::string text = slurp(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back, b);
    EXPECT_NE(text.find("# crossing="), std::string::npos);
    EXPECT_EQ(text.find("dip:df_mc"), std::string::npos);
}

TEST(Curves, CsvIsDeterministic)
{
    const auto b = build_bundle({dip_ramp(), ste_flat()});
    const auto p1 = temp_path("d1.csv"), p2 = temp_path("d2.csv");
    export_curves(b, p1, CurveFormat::csv);
    export_curves(b, p2, CurveFormat::csv);
    EXPECT_EQ(slurp(p1), slurp(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST(Curves, SvgHasOneStopMarkerPerRun)
{
    const auto b = build_bundle({dip_ramp(), ste_flat(), ste_flat()});
    const auto path = temp_path("plot.svg");
    export_curves(b, path, CurveFormat::svg);
    const std::string svg = slurp(path);
    std::filesystem::remove(path);
    EXPECT_EQ(count(svg, "class=\"stop-marker\""), 3u);
    EXPECT_EQ(count(svg, "class=\"panel\""), 6u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Curves, IoErrors)
{
    const auto b = build_bundle({ste_flat()});
    EXPECT_THROW(export_curves(b, "/nonexistent-dir/x.csv", CurveFormat::csv), IoError);
    EXPECT_THROW(import_curves_csv(temp_path("missing.csv")), IoError);
    EXPECT_EQ(parse_curve_format("svg-plot"), CurveFormat::svg);
    EXPECT_THROW(parse_curve_format("png"), ArgumentError);
}
