#include "uattr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "uattr/common.hpp"

namespace uattr {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
constexpr int kPaletteSize = 6;

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

std::string fmt_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series,
                           int width, int height) {
    if (series.empty()) fail(ErrorKind::validation, "line chart needs at least one series");
    const double ml = 70, mr = 20, mt = 46, mb = 56;
    const double pw = width - ml - mr, ph = height - mt - mb;
    if (pw <= 0 || ph <= 0) fail(ErrorKind::validation, "line chart dimensions too small");

    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool first = true;
    for (const auto& s : series)
        for (const auto& p : s.points) {
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.yerr))
                fail(ErrorKind::numeric, "non-finite chart point in series " + s.name);
            if (first) {
                xmin = xmax = p.x;
                ymin = p.y - p.yerr;
                ymax = p.y + p.yerr;
                first = false;
            } else {
                xmin = std::min(xmin, p.x);
                xmax = std::max(xmax, p.x);
                ymin = std::min(ymin, p.y - p.yerr);
                ymax = std::max(ymax, p.y + p.yerr);
            }
        }
    if (first) fail(ErrorKind::validation, "line chart needs at least one point");
    if (xmax == xmin) { xmin -= 1.0; xmax += 1.0; }
    const double ypad = (ymax == ymin) ? (ymin == 0.0 ? 1.0 : std::abs(ymin) * 0.1) : (ymax - ymin) * 0.08;
    ymin -= ypad;
    ymax += ypad;

    const auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    const auto Y = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"15\" font-weight=\"bold\">" << xml_escape(title) << "</text>\n";

    for (int i = 0; i < 5; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        svg << "<line x1=\"" << fmt_coord(X(xv)) << "\" y1=\"" << fmt_coord(mt) << "\" x2=\""
            << fmt_coord(X(xv)) << "\" y2=\"" << fmt_coord(mt + ph)
            << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
        svg << "<line x1=\"" << fmt_coord(ml) << "\" y1=\"" << fmt_coord(Y(yv)) << "\" x2=\""
            << fmt_coord(ml + pw) << "\" y2=\"" << fmt_coord(Y(yv))
            << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << fmt_coord(X(xv)) << "\" y=\"" << fmt_coord(mt + ph + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_tick(xv)
            << "</text>\n";
        svg << "<text x=\"" << fmt_coord(ml - 8) << "\" y=\"" << fmt_coord(Y(yv) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_tick(yv)
            << "</text>\n";
    }
    svg << "<rect x=\"" << fmt_coord(ml) << "\" y=\"" << fmt_coord(mt) << "\" width=\"" << fmt_coord(pw)
        << "\" height=\"" << fmt_coord(ph) << "\" fill=\"none\" stroke=\"#404040\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(x_label)
        << "</text>\n";
    svg << "<text x=\"18\" y=\"" << fmt_coord(mt + ph / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 "
        << fmt_coord(mt + ph / 2) << ")\">" << xml_escape(y_label) << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        if (s.points.empty()) continue;
        const char* color = kPalette[si % kPaletteSize];
        bool has_err = false;
        for (const auto& p : s.points)
            if (p.yerr > 0.0) has_err = true;
        if (has_err && s.points.size() > 1) {
            svg << "<path d=\"M";
            for (const auto& p : s.points)
                svg << ' ' << fmt_coord(X(p.x)) << ',' << fmt_coord(Y(p.y + p.yerr));
            for (auto it = s.points.rbegin(); it != s.points.rend(); ++it)
                svg << " L " << fmt_coord(X(it->x)) << ',' << fmt_coord(Y(it->y - it->yerr));
            svg << " Z\" fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
        }
        svg << "<polyline points=\"";
        for (const auto& p : s.points) svg << fmt_coord(X(p.x)) << ',' << fmt_coord(Y(p.y)) << ' ';
        svg << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        for (const auto& p : s.points)
            svg << "<circle cx=\"" << fmt_coord(X(p.x)) << "\" cy=\"" << fmt_coord(Y(p.y))
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }

    const double lx = ml + pw - 170, ly = mt + 10;
    svg << "<rect x=\"" << fmt_coord(lx - 8) << "\" y=\"" << fmt_coord(ly - 14) << "\" width=\"178\" height=\""
        << fmt_coord(series.size() * 18.0 + 10) << "\" fill=\"white\" fill-opacity=\"0.85\" stroke=\"#c0c0c0\"/>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const double yy = ly + si * 18.0;
        const char* color = kPalette[si % kPaletteSize];
        svg << "<line x1=\"" << fmt_coord(lx) << "\" y1=\"" << fmt_coord(yy - 4) << "\" x2=\""
            << fmt_coord(lx + 22) << "\" y2=\"" << fmt_coord(yy - 4) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << fmt_coord(lx + 28) << "\" y=\"" << fmt_coord(yy)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(series[si].name)
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::vector<MethodSummary> summarize_reports(const std::vector<CounterfactualReport>& reports) {
    std::map<std::string, std::map<std::size_t, std::vector<const CounterfactualReport*>>> by;
    for (const auto& r : reports) by[r.method][r.k].push_back(&r);

    std::vector<MethodSummary> out;
    for (const auto& [method, by_k] : by) {
        for (const auto& [k, rows] : by_k) {
            MethodSummary s;
            s.method = method;
            s.k = k;
            s.queries = rows.size();
            std::vector<double> dl, dg, df;
            for (const auto* r : rows) {
                dl.push_back(r->delta_loss);
                dg.push_back(r->delta_gen_mse);
                df.push_back(r->delta_gen_feat);
            }
            s.mean_delta_loss = mean_of(dl);
            s.mean_delta_gen_mse = mean_of(dg);
            s.mean_delta_gen_feat = mean_of(df);
            if (dl.size() > 1) {
                std::vector<double> sq(dl.size());
                for (std::size_t i = 0; i < dl.size(); ++i) {
                    const double d = dl[i] - s.mean_delta_loss;
                    sq[i] = d * d;
                }
                s.stderr_delta_loss = std::sqrt(tree_sum(sq) / double(dl.size() - 1) / double(dl.size()));
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

void write_report(const std::filesystem::path& dir,
                  const std::vector<CounterfactualReport>& reports,
                  const RandomReferenceCurve& random_curve,
                  const std::vector<std::string>& header_lines) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const auto summaries = summarize_reports(reports);

    std::map<std::string, Series> loss_series, gen_series;
    for (const auto& s : summaries) {
        loss_series[s.method].name = s.method;
        loss_series[s.method].points.push_back({double(s.k), s.mean_delta_loss, s.stderr_delta_loss});
        gen_series[s.method].name = s.method;
        gen_series[s.method].points.push_back({double(s.k), s.mean_delta_gen_mse, 0.0});
    }
    std::vector<Series> loss_list, gen_list;
    for (auto& [name, s] : loss_series) loss_list.push_back(std::move(s));
    for (auto& [name, s] : gen_series) gen_list.push_back(std::move(s));
    if (!random_curve.points.empty()) {
        Series rl, rg;
        rl.name = "random";
        rg.name = "random";
        for (const auto& pt : random_curve.points) {
            rl.points.push_back({double(pt.k), pt.mean_delta_loss, pt.stderr_delta_loss});
            rg.points.push_back({double(pt.k), pt.mean_delta_gen, 0.0});
        }
        loss_list.push_back(std::move(rl));
        gen_list.push_back(std::move(rg));
    }

    {
        std::ofstream out(dir / "delta_loss_vs_k.svg", std::ios::trunc);
        if (!out) fail(ErrorKind::io, "cannot write chart in " + dir.string());
        out << line_chart_svg("Query loss change vs removal size", "K removed images",
                              "mean delta loss", loss_list);
    }
    {
        std::ofstream out(dir / "delta_gen_vs_k.svg", std::ios::trunc);
        if (!out) fail(ErrorKind::io, "cannot write chart in " + dir.string());
        out << line_chart_svg("Generation deviation vs removal size", "K removed images",
                              "mean generation MSE", gen_list);
    }

    std::ofstream md(dir / "report.md", std::ios::trunc);
    if (!md) fail(ErrorKind::io, "cannot write report in " + dir.string());
    md << "# Attribution by unlearning: counterfactual evaluation\n\n";
    for (const auto& line : header_lines) md << line << '\n';
    if (!header_lines.empty()) md << '\n';

    md << "## Query loss change\n\n![delta loss vs k](delta_loss_vs_k.svg)\n\n";
    md << "## Generation deviation\n\n![delta gen vs k](delta_gen_vs_k.svg)\n\n";

    md << "## Method summaries\n\n";
    md << "| method | k | queries | mean dL | stderr dL | mean dG (mse) | mean dG (feat) | equiv. random k |\n";
    md << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& s : summaries) {
        std::string equiv = "n/a";
        if (random_curve.points.size() >= 2) {
            const EquivalentK ek = equivalent_random_k(random_curve, s.mean_delta_loss);
            char buf[48];
            std::snprintf(buf, sizeof buf, "%.4g%s", ek.k, ek.out_of_range ? " (clamped)" : "");
            equiv = buf;
        }
        char buf[256];
        std::snprintf(buf, sizeof buf, "| %s | %zu | %zu | %.6g | %.6g | %.6g | %.6g | %s |\n",
                      s.method.c_str(), s.k, s.queries, s.mean_delta_loss, s.stderr_delta_loss,
                      s.mean_delta_gen_mse, s.mean_delta_gen_feat, equiv.c_str());
        md << buf;
    }
    md << '\n';

    if (!random_curve.points.empty()) {
        md << "## Random-removal reference (" << random_curve.models_per_k << " models per k)\n\n";
        md << "| k | mean dL | stderr dL | mean dG (mse) |\n|---|---|---|---|\n";
        for (const auto& pt : random_curve.points) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "| %zu | %.6g | %.6g | %.6g |\n", pt.k,
                          pt.mean_delta_loss, pt.stderr_delta_loss, pt.mean_delta_gen);
            md << buf;
        }
        md << '\n';
    }

    // head-to-head: share of queries where unlearning degrades the query loss more
    std::map<std::pair<std::string, std::size_t>, std::map<std::string, double>> joined;
    for (const auto& a : reports) {
        if (a.method != "unlearning") continue;
        for (const auto& b : reports) {
            if (b.method == "unlearning" || b.k != a.k || b.query_hash != a.query_hash) continue;
            joined[{b.method, b.k}][a.query_hash + "#" + b.query_hash] =
                a.delta_loss > b.delta_loss ? 1.0 : 0.0;
        }
    }
    if (!joined.empty()) {
        md << "## Unlearning vs baselines (fraction of queries with larger dL)\n\n";
        md << "| baseline | k | fraction | queries |\n|---|---|---|---|\n";
        for (const auto& [key, wins] : joined) {
            std::vector<double> w;
            for (const auto& [q, v] : wins) w.push_back(v);
            char buf[128];
            std::snprintf(buf, sizeof buf, "| %s | %zu | %.3f | %zu |\n", key.first.c_str(),
                          key.second, mean_of(w), w.size());
            md << buf;
        }
        md << '\n';
    }
    md.flush();
    if (!md) fail(ErrorKind::io, "write failed for report in " + dir.string());
}

}  // namespace uattr
