#include "dipstop/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dipstop/errors.hpp"

namespace dipstop {

std::string to_string(SeriesKind s)
{
    switch (s) {
    case SeriesKind::total_loss: return "total_loss";
    case SeriesKind::df_mc: return "df_mc";
    case SeriesKind::psnr_to_y: return "psnr_to_y";
    case SeriesKind::psnr_to_x: return "psnr_to_x";
    case SeriesKind::psnr_ema_to_x: return "psnr_ema_to_x";
    case SeriesKind::df_gt: return "df_gt";
    }
    return "?";
}

SeriesKind parse_series_kind(std::string_view s)
{
    for (SeriesKind k : kAllSeries)
        if (to_string(k) == s) return k;
    throw ArgumentError("unknown series '" + std::string(s) + "'");
}

namespace {

std::optional<double> value_of(const TraceRecord& r, SeriesKind s)
{
    switch (s) {
    case SeriesKind::total_loss: return r.total_loss;
    case SeriesKind::df_mc: return r.df_mc;
    case SeriesKind::psnr_to_y: return r.psnr_to_y;
    case SeriesKind::psnr_to_x: return r.psnr_to_x;
    case SeriesKind::psnr_ema_to_x: return r.psnr_ema_to_x;
    case SeriesKind::df_gt: return r.df_gt;
    }
    return std::nullopt;
}

std::string fmt17(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(double v, const char* spec = "%.4g")
{
    char buf[40];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

const BundleRun& unique_run(const TrajectoryBundle& b, Objective o)
{
    const BundleRun* found = nullptr;
    for (const auto& r : b.runs) {
        if (r.objective != o) continue;
        if (found) throw CapabilityError("crossing report: more than one " + to_string(o) + " run");
        found = &r;
    }
    if (!found) throw CapabilityError("crossing report: bundle has no " + to_string(o) + " run");
    for (SeriesKind s : {SeriesKind::df_gt, SeriesKind::psnr_to_x})
        if (!found->get(s)) throw CapabilityError("crossing report: run '" + found->name + "' lacks " + to_string(s));
    return *found;
}

}  // namespace

TrajectoryBundle build_bundle(const std::vector<RunTrace>& traces)
{
    if (traces.empty()) throw ArgumentError("build_bundle: no traces");
    TrajectoryBundle b;
    std::set<int> grid;
    for (const auto& t : traces)
        for (const auto& r : t.records) grid.insert(r.iter);
    b.grid.assign(grid.begin(), grid.end());
    std::map<int, std::size_t> position;
    for (std::size_t i = 0; i < b.grid.size(); ++i) position[b.grid[i]] = i;

    std::map<std::string, int> seen;
    for (const auto& t : traces) {
        BundleRun run;
        const std::string base = t.label.empty() ? to_string(t.objective) : t.label;
        const int count = ++seen[base];
        run.name = count == 1 ? base : base + "#" + std::to_string(count);
        run.objective = t.objective;
        run.stop_iter = t.stop_iter;
        run.stop_reason = t.stop_reason;
        run.end_iter = t.records.empty() ? 0 : t.records.back().iter;
        for (SeriesKind s : kAllSeries) {
            Series values(b.grid.size());
            bool any = false;
            for (const auto& r : t.records)
                if (auto v = value_of(r, s)) {
                    values[position[r.iter]] = *v;
                    any = true;
                }
            if (any) run.series[static_cast<std::size_t>(s)] = std::move(values);
        }
        b.runs.push_back(std::move(run));
    }
    return b;
}

CrossingReport crossing_report(const TrajectoryBundle& bundle)
{
    const BundleRun& dip = unique_run(bundle, Objective::dip);
    const BundleRun& ste = unique_run(bundle, Objective::ste);
    CrossingReport rep;
    rep.dip_run = dip.name;
    rep.ste_run = ste.name;

    const Series& psnr = *dip.get(SeriesKind::psnr_to_x);
    bool have_peak = false;
    for (std::size_t i = 0; i < bundle.grid.size(); ++i)
        if (psnr[i] && (!have_peak || *psnr[i] > rep.dip_peak_psnr)) {
            rep.dip_peak_psnr = *psnr[i];
            rep.dip_peak_iter = bundle.grid[i];
            have_peak = true;
        }
    if (!have_peak) throw CapabilityError("crossing report: dip run has no PSNR values");

    // ste df_gt, held at its last logged value after the run ends.
    const Series& d = *dip.get(SeriesKind::df_gt);
    const Series& s = *ste.get(SeriesKind::df_gt);
    std::optional<double> held;
    std::optional<double> prev_f;
    int prev_iter = 0;
    for (std::size_t i = 0; i < bundle.grid.size(); ++i) {
        if (s[i]) held = s[i];
        if (!d[i] || !held) continue;
        const double f = *d[i] - *held;
        if (f < 0.0) {
            rep.intersection_iter.reset();
        } else if (prev_f && *prev_f < 0.0) {
            const double t = -*prev_f / (f - *prev_f);
            rep.intersection_iter = prev_iter + t * (bundle.grid[i] - prev_iter);
        }
        prev_f = f;
        prev_iter = bundle.grid[i];
    }
    if (rep.intersection_iter) {
        rep.gap = std::abs(*rep.intersection_iter - rep.dip_peak_iter);
        if (rep.dip_peak_iter > 0) rep.relative_gap = *rep.gap / rep.dip_peak_iter;
    }
    return rep;
}

CurveFormat parse_curve_format(std::string_view s)
{
    if (s == "csv") return CurveFormat::csv;
    if (s == "svg" || s == "svg-plot") return CurveFormat::svg;
    throw ArgumentError("unknown curve format '" + std::string(s) + "'");
}

namespace {

std::optional<CrossingReport> try_crossing(const TrajectoryBundle& b)
{
    try {
        return crossing_report(b);
    } catch (const CapabilityError&) {
        return std::nullopt;
    }
}

std::string crossing_line(const CrossingReport& r)
{
    std::string s = "dip=" + r.dip_run + ";ste=" + r.ste_run + ";dip_peak_iter=" + std::to_string(r.dip_peak_iter) +
                    ";dip_peak_psnr=" + fmt17(r.dip_peak_psnr);
    s += ";intersection_iter=" + (r.intersection_iter ? fmt17(*r.intersection_iter) : std::string("none"));
    s += ";gap=" + (r.gap ? fmt17(*r.gap) : std::string("none"));
    s += ";relative_gap=" + (r.relative_gap ? fmt17(*r.relative_gap) : std::string("none"));
    return s;
}

void write_csv(std::ostream& out, const TrajectoryBundle& b)
{
    for (const auto& r : b.runs)
        out << "# run=" << r.name << ',' << to_string(r.objective) << ',' << r.stop_iter << ','
            << to_string(r.stop_reason) << ',' << r.end_iter << '\n';
    if (auto rep = try_crossing(b)) out << "# crossing=" << crossing_line(*rep) << '\n';
    out << "iter";
    for (const auto& r : b.runs)
        for (SeriesKind s : kAllSeries)
            if (r.get(s)) out << ',' << r.name << ':' << to_string(s);
    out << '\n';
    for (std::size_t i = 0; i < b.grid.size(); ++i) {
        out << b.grid[i];
        for (const auto& r : b.runs)
            for (SeriesKind s : kAllSeries)
                if (const auto& series = r.get(s)) {
                    out << ',';
                    if ((*series)[i]) out << fmt17(*(*series)[i]);
                }
        out << '\n';
    }
}

// ---------------------------------------------------------------- svg

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape_xml(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

void write_svg(std::ostream& out, const TrajectoryBundle& b)
{
    constexpr double kWidth = 720, kPanel = 220, kLeft = 70, kRight = 160, kTop = 30, kBottom = 30;
    std::vector<SeriesKind> panels;
    for (SeriesKind s : kAllSeries)
        if (std::any_of(b.runs.begin(), b.runs.end(), [&](const BundleRun& r) { return r.get(s).has_value(); }))
            panels.push_back(s);

    const double height = kPanel * panels.size();
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << kWidth << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    const double gx0 = b.grid.empty() ? 0 : b.grid.front();
    const double gx1 = b.grid.empty() ? 1 : std::max<double>(b.grid.back(), gx0 + 1);
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kPanel - kTop - kBottom;
    auto px = [&](double it) { return kLeft + (it - gx0) / (gx1 - gx0) * plot_w; };

    for (std::size_t p = 0; p < panels.size(); ++p) {
        const SeriesKind s = panels[p];
        const double y0 = p * kPanel + kTop;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& r : b.runs)
            if (const auto& series = r.get(s))
                for (const auto& v : *series)
                    if (v && std::isfinite(*v)) lo = std::min(lo, *v), hi = std::max(hi, *v);
        if (!(lo <= hi)) lo = 0, hi = 1;
        if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
        auto py = [&](double v) { return y0 + plot_h - (std::clamp(v, lo, hi) - lo) / (hi - lo) * plot_h; };

        out << "<g class=\"panel\" data-series=\"" << to_string(s) << "\">\n"
            << "<text x=\"" << kLeft << "\" y=\"" << y0 - 10 << "\" font-weight=\"bold\">" << to_string(s)
            << "</text>\n"
            << "<rect x=\"" << kLeft << "\" y=\"" << y0 << "\" width=\"" << plot_w << "\" height=\"" << plot_h
            << "\" fill=\"none\" stroke=\"#888\"/>\n"
            << "<text x=\"" << kLeft - 5 << "\" y=\"" << y0 + 10 << "\" text-anchor=\"end\">" << fmt(hi)
            << "</text>\n"
            << "<text x=\"" << kLeft - 5 << "\" y=\"" << y0 + plot_h << "\" text-anchor=\"end\">" << fmt(lo)
            << "</text>\n"
            << "<text x=\"" << kLeft << "\" y=\"" << y0 + plot_h + 15 << "\">" << fmt(gx0, "%.0f") << "</text>\n"
            << "<text x=\"" << kLeft + plot_w << "\" y=\"" << y0 + plot_h + 15 << "\" text-anchor=\"end\">"
            << fmt(gx1, "%.0f") << "</text>\n";
        if (lo < 0 && hi > 0)
            out << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + plot_w << "\" y1=\"" << py(0) << "\" y2=\"" << py(0)
                << "\" stroke=\"#ccc\" stroke-dasharray=\"3,3\"/>\n";

        for (std::size_t ri = 0; ri < b.runs.size(); ++ri) {
            const auto& run = b.runs[ri];
            const char* color = kPalette[ri % std::size(kPalette)];
            const auto& series = run.get(s);
            if (series) {
                out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
                for (std::size_t i = 0; i < b.grid.size(); ++i)
                    if ((*series)[i] && std::isfinite(*(*series)[i]))
                        out << fmt(px(b.grid[i]), "%.2f") << ',' << fmt(py(*(*series)[i]), "%.2f") << ' ';
                out << "\"/>\n";
            }
            if (p == 0) {
                out << "<text x=\"" << kLeft + plot_w + 10 << "\" y=\"" << y0 + 14 * (ri + 1) << "\" fill=\"" << color
                    << "\">" << escape_xml(run.name) << "</text>\n";
                // Stop marker on the first panel.
                std::optional<double> at;
                if (series) {
                    const auto it = std::lower_bound(b.grid.begin(), b.grid.end(), run.stop_iter);
                    if (it != b.grid.end() && *it == run.stop_iter) at = (*series)[it - b.grid.begin()];
                }
                const double sx = px(run.stop_iter);
                const double sy = at && std::isfinite(*at) ? py(*at) : y0 + plot_h;
                out << "<g class=\"stop-marker\" data-run=\"" << escape_xml(run.name) << "\">"
                    << "<line x1=\"" << fmt(sx, "%.2f") << "\" x2=\"" << fmt(sx, "%.2f") << "\" y1=\"" << y0
                    << "\" y2=\"" << y0 + plot_h << "\" stroke=\"" << color << "\" stroke-dasharray=\"4,2\"/>"
                    << "<circle cx=\"" << fmt(sx, "%.2f") << "\" cy=\"" << fmt(sy, "%.2f") << "\" r=\"3.5\" fill=\""
                    << color << "\"/>"
                    << "<text x=\"" << fmt(sx + 4, "%.2f") << "\" y=\"" << fmt(sy - 6, "%.2f") << "\" fill=\"" << color
                    << "\">" << escape_xml(run.name) << " stop " << run.stop_iter << " ("
                    << to_string(run.stop_reason) << ")</text></g>\n";
            }
        }
        out << "</g>\n";
    }
    if (auto rep = try_crossing(b))
        out << "<desc class=\"crossing\">" << escape_xml(crossing_line(*rep)) << "</desc>\n";
    out << "</svg>\n";
}

}  // namespace

void export_curves(const TrajectoryBundle& bundle, const std::filesystem::path& path, CurveFormat format)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    if (format == CurveFormat::csv)
        write_csv(out, bundle);
    else
        write_svg(out, bundle);
    out.flush();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TrajectoryBundle import_curves_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    TrajectoryBundle b;
    std::map<std::string, std::size_t> run_index;
    std::vector<std::pair<std::size_t, SeriesKind>> columns;
    bool have_columns = false;
    std::string line;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (line.rfind("# run=", 0) == 0) {
                const auto f = split(line.substr(6), ',');
                if (f.size() != 5) throw IoError("curves csv: bad run line");
                BundleRun r;
                r.name = f[0];
                r.objective = parse_objective(f[1]);
                r.stop_iter = std::stoi(f[2]);
                r.stop_reason = parse_stop_reason(f[3]);
                r.end_iter = std::stoi(f[4]);
                run_index[r.name] = b.runs.size();
                b.runs.push_back(std::move(r));
                continue;
            }
            if (line[0] == '#') continue;
            const auto cells = split(line, ',');
            if (!have_columns) {
                if (cells.empty() || cells[0] != "iter") throw IoError("curves csv: missing column row");
                for (std::size_t c = 1; c < cells.size(); ++c) {
                    const auto colon = cells[c].rfind(':');
                    if (colon == std::string::npos) throw IoError("curves csv: bad column '" + cells[c] + "'");
                    const auto it = run_index.find(cells[c].substr(0, colon));
                    if (it == run_index.end()) throw IoError("curves csv: unknown run in '" + cells[c] + "'");
                    columns.emplace_back(it->second, parse_series_kind(cells[c].substr(colon + 1)));
                    b.runs[it->second].series[static_cast<std::size_t>(columns.back().second)].emplace();
                }
                have_columns = true;
                continue;
            }
            if (cells.size() != columns.size() + 1) throw IoError("curves csv: wrong number of cells");
            b.grid.push_back(std::stoi(cells[0]));
            for (std::size_t c = 0; c < columns.size(); ++c) {
                auto& series = *b.runs[columns[c].first].series[static_cast<std::size_t>(columns[c].second)];
                const std::string& v = cells[c + 1];
                if (v.empty()) series.emplace_back();
                else if (v == "inf" || v == "-inf") series.emplace_back(v == "inf" ? HUGE_VAL : -HUGE_VAL);
                else series.emplace_back(std::stod(v));
            }
        }
    } catch (const std::logic_error& e) {
        throw IoError(std::string("curves csv: malformed value: ") + e.what());
    } catch (const ConfigError& e) {
        throw IoError(std::string("curves csv: ") + e.what());
    } catch (const ArgumentError& e) {
        throw IoError(std::string("curves csv: ") + e.what());
    }
    if (!have_columns) throw IoError("curves csv: missing column row");
    return b;
}

}  // namespace dipstop
