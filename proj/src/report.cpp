#include "cttagen/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cttagen {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

struct DomainRow {
    std::string domain;
    double accuracy;
    double l_orth, l_hsic, l_align, l_total;
};

std::vector<DomainRow> domain_rows(const RunRecord& r) {
    std::vector<DomainRow> rows;
    for (std::size_t d = 0; d < r.domains.size(); ++d) {
        DomainRow row{r.domains[d], r.domain_accuracy[d], 0, 0, 0, 0};
        std::size_t used = 0;
        for (const auto& s : r.steps) {
            if (s.domain_index != d || s.skipped) continue;
            row.l_orth += s.l_orth;
            row.l_hsic += s.l_hsic;
            row.l_align += s.l_align;
            row.l_total += s.l_total;
            ++used;
        }
        if (used > 0) {
            const double inv = 1.0 / static_cast<double>(used);
            row.l_orth *= inv;
            row.l_hsic *= inv;
            row.l_align *= inv;
            row.l_total *= inv;
        }
        rows.push_back(std::move(row));
    }
    rows.push_back({"source_backtest", r.source_backtest_accuracy, 0, 0, 0, 0});
    return rows;
}

// Minimal SVG line plot; series are (label, points) with points already in
// data coordinates.
struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<Series>& series) {
    const double width = 720, height = 440;
    const double ml = 60, mr = 160, mt = 40, mb = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    auto py = [&](double y) {
        return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
        << height << "\">\n";
    svg << "  <rect width=\"" << width << "\" height=\"" << height
        << "\" fill=\"white\"/>\n";
    svg << "  <text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";
    // axes
    svg << "  <line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\""
        << width - mr << "\" y2=\"" << height - mb
        << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    svg << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
        << "\" y2=\"" << height - mb << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        svg << "  <text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt_double(yv) << "</text>\n";
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        svg << "  <text x=\"" << px(xv) << "\" y=\"" << height - mb + 16
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt_double(xv) << "</text>\n";
    }
    svg << "  <text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
        << x_label << "</text>\n";
    svg << "  <text x=\"16\" y=\"" << (mt + height - mb) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << (mt + height - mb) / 2 << ")\">"
        << y_label << "</text>\n";

    std::size_t ci = 0;
    for (const auto& s : series) {
        const char* color = kPalette[ci % (sizeof(kPalette) / sizeof(kPalette[0]))];
        svg << "  <polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : s.points)
            svg << fmt_double(px(x)) << "," << fmt_double(py(y)) << " ";
        svg << "\"/>\n";
        svg << "  <text x=\"" << width - mr + 10 << "\" y=\"" << mt + 16 * ci + 10
            << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color
            << "\">" << s.label << "</text>\n";
        ++ci;
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

}  // namespace

std::string metrics_csv(const std::vector<RunRecord>& records) {
    std::ostringstream csv;
    csv << "run_id,domain,accuracy,L_orth,L_HSIC,L_OT,L_total,seed\n";
    for (const auto& r : records) {
        for (const auto& row : domain_rows(r)) {
            csv << r.run_id << "," << row.domain << "," << fmt_double(row.accuracy)
                << "," << fmt_double(row.l_orth) << "," << fmt_double(row.l_hsic)
                << "," << fmt_double(row.l_align) << "," << fmt_double(row.l_total)
                << "," << r.seed << "\n";
        }
    }
    return csv.str();
}

void emit_report(const std::vector<RunRecord>& records,
                 const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir / "metrics.csv", metrics_csv(records));

    for (const auto& r : records)
        save_json_file(out_dir / ("run_" + r.run_id + ".json"), r.to_json());

    // Accuracy vs domain index across runs.
    std::vector<Series> acc_series;
    for (const auto& r : records) {
        Series s;
        s.label = r.run_id;
        for (std::size_t d = 0; d < r.domain_accuracy.size(); ++d)
            s.points.push_back({static_cast<double>(d), r.domain_accuracy[d]});
        acc_series.push_back(std::move(s));
    }
    write_text_file(out_dir / "plots" / "accuracy.svg",
                    svg_line_plot("accuracy by domain", "domain index", "accuracy",
                                  acc_series));

    // Per-run loss curves.
    for (const auto& r : records) {
        if (r.steps.empty()) continue;
        Series total{"L_total", {}}, align{"L_OT", {}}, orth{"L_orth", {}},
            hs{"L_HSIC", {}};
        for (std::size_t i = 0; i < r.steps.size(); ++i) {
            const double x = static_cast<double>(i);
            total.points.push_back({x, r.steps[i].l_total});
            align.points.push_back({x, r.steps[i].l_align});
            orth.points.push_back({x, r.steps[i].l_orth});
            hs.points.push_back({x, r.steps[i].l_hsic});
        }
        write_text_file(out_dir / "plots" / ("losses_" + r.run_id + ".svg"),
                        svg_line_plot("loss curves " + r.run_id, "step", "loss",
                                      {total, align, orth, hs}));
    }
}

std::vector<RunRecord> load_records(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir))
        throw IoError("records directory does not exist: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("run_", 0) == 0 && entry.path().extension() == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<RunRecord> records;
    for (const auto& f : files)
        records.push_back(RunRecord::from_json(load_json_file(f)));
    return records;
}

}  // namespace cttagen
