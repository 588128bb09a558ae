#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ecoc/error.hpp"

namespace ecoc {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

/// Metric curves per split from a metrics.log body: field -> split -> (epoch, value).
inline std::map<std::string, std::map<std::string, Series>> collect_series(const std::string& metrics_text,
                                                                          const std::vector<std::string>& fields) {
    std::map<std::string, std::map<std::string, Series>> out;
    std::istringstream in(metrics_text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (line.empty()) continue;
        std::map<std::string, std::string> kv;
        std::istringstream ls(line);
        for (std::string tok; ls >> tok;) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) throw FormatError("metrics line " + std::to_string(no) + ": malformed field '" + tok + "'");
            kv[tok.substr(0, eq)] = tok.substr(eq + 1);
        }
        if (!kv.count("epoch") || !kv.count("split")) throw FormatError("metrics line " + std::to_string(no) + ": missing epoch/split");
        const double epoch = std::stod(kv["epoch"]);
        for (const auto& f : fields) {
            auto it = kv.find(f);
            if (it == kv.end()) continue;
            Series& s = out[f][kv["split"]];
            s.label = kv["split"];
            s.points.emplace_back(epoch, std::stod(it->second));
        }
    }
    return out;
}

namespace detail {

inline std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

}  // namespace detail

/// Stacked line charts, one panel per field, one polyline per split.
inline std::string render_svg(const std::map<std::string, std::map<std::string, Series>>& panels, const std::string& title) {
    const double W = 640, PH = 260, ML = 70, MR = 110, MT = 40, MB = 40;
    const double H = MT + static_cast<double>(std::max<std::size_t>(1, panels.size())) * (PH + MB);
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
    double top = MT;
    for (const auto& [field, splits] : panels) {
        double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
        for (const auto& [_, ser] : splits)
            for (auto [x, y] : ser.points) {
                if (!std::isfinite(y)) continue;
                x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
            }
        if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
        if (x1 == x0) x1 = x0 + 1;
        if (y1 == y0) y1 = y0 + 1;
        const double pw = W - ML - MR;
        auto px = [&](double x) { return ML + (x - x0) / (x1 - x0) * pw; };
        auto py = [&](double y) { return top + PH - (y - y0) / (y1 - y0) * PH; };
        s << "<rect x=\"" << ML << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << PH
          << "\" fill=\"none\" stroke=\"#444\"/>\n";
        s << "<text x=\"14\" y=\"" << top + PH / 2 << "\" transform=\"rotate(-90 14 " << top + PH / 2 << ")\" text-anchor=\"middle\">" << field
          << "</text>\n";
        for (int i = 0; i <= 4; ++i) {
            double y = y0 + (y1 - y0) * i / 4.0, x = x0 + (x1 - x0) * i / 4.0;
            s << "<text x=\"" << ML - 4 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << detail::num(y) << "</text>\n";
            s << "<text x=\"" << px(x) << "\" y=\"" << top + PH + 14 << "\" text-anchor=\"middle\">" << detail::num(x) << "</text>\n";
        }
        s << "<text x=\"" << ML + pw / 2 << "\" y=\"" << top + PH + 28 << "\" text-anchor=\"middle\">epoch</text>\n";
        std::size_t ci = 0;
        for (const auto& [split, ser] : splits) {
            const char* col = colors[ci % 5];
            s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
            for (auto [x, y] : ser.points)
                if (std::isfinite(y)) s << px(x) << "," << py(y) << " ";
            s << "\"/>\n";
            s << "<text x=\"" << ML + pw + 8 << "\" y=\"" << top + 16 + 14 * static_cast<double>(ci) << "\" fill=\"" << col << "\">" << split
              << "</text>\n";
            ++ci;
        }
        top += PH + MB;
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace ecoc
