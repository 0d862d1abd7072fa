#include "cakt/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cakt/error.hpp"

namespace cakt {

namespace {

std::string fixed(double v, int digits = 10) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string auc_cell(const ExperimentRow& row) { return row.failed ? "failed" : fixed(row.auc); }

struct Frame {
  double width = 640;
  double height = 400;
  double left = 70;
  double right = 20;
  double top = 40;
  double bottom = 50;

  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
};

struct Range {
  double lo = 0.0;
  double hi = 1.0;

  static Range of(const std::vector<double>& values) {
    Range r{values.front(), values.front()};
    for (double v : values) {
      r.lo = std::min(r.lo, v);
      r.hi = std::max(r.hi, v);
    }
    if (r.hi - r.lo < 1e-12) {
      r.lo -= 0.5;
      r.hi += 0.5;
    }
    const double pad = 0.05 * (r.hi - r.lo);
    return {r.lo - pad, r.hi + pad};
  }
  double map(double v, double px_lo, double px_hi) const {
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string svg_open(const Frame& f, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\""
     << f.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << f.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(title) << "</text>\n";
  return os.str();
}

std::string axes(const Frame& f, const Range& x, const Range& y, const std::string& xlabel,
                 const std::string& ylabel) {
  std::ostringstream os;
  const double x0 = f.left;
  const double y0 = f.top + f.plot_h();
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 + f.plot_w() << "\" y2=\""
     << y0 << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << x0 << "\" y1=\"" << f.top << "\" x2=\"" << x0 << "\" y2=\"" << y0
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y.map(yv, y0, f.top);
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">"
       << fixed(yv, 3) << "</text>\n";
    const double xv = x.lo + (x.hi - x.lo) * i / 4.0;
    const double px = x.map(xv, x0, x0 + f.plot_w());
    os << "<text x=\"" << px << "\" y=\"" << y0 + 18 << "\" text-anchor=\"middle\">"
       << fixed(xv, 1) << "</text>\n";
  }
  os << "<text x=\"" << x0 + f.plot_w() / 2 << "\" y=\"" << f.height - 10
     << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n"
     << "<text x=\"16\" y=\"" << f.top + f.plot_h() / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << f.top + f.plot_h() / 2 << ")\">" << escape(ylabel) << "</text>\n";
  return os.str();
}

std::string polyline(const Frame& f, const Range& x, const Range& y, const std::vector<double>& xs,
                     const std::vector<double>& ys, const std::string& colour) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
  bool first = true;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (std::isnan(ys[i])) continue;
    if (!first) os << ' ';
    first = false;
    os << fixed(x.map(xs[i], f.left, f.left + f.plot_w()), 2) << ','
       << fixed(y.map(ys[i], f.top + f.plot_h(), f.top), 2);
  }
  os << "\"/>\n";
  return os.str();
}

}  // namespace

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out) {
  out << "epoch,train_loss,val_loss,val_auc,lr\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << fixed(r.train_loss) << ',' << fixed(r.val_loss) << ','
        << fixed(r.val_auc) << ',' << fixed(r.lr, 12) << '\n';
  }
}

void write_sweep_csv(const ExperimentTable& table, std::ostream& out) {
  out << "axis,value,seed,fold,auc\n";
  for (const auto& r : table.rows) {
    out << table.axis << ',' << r.label << ',' << r.seed << ',' << r.fold << ',' << auc_cell(r)
        << '\n';
  }
}

void write_ablation_csv(const ExperimentTable& table, std::ostream& out) {
  out << "variant,seed,fold,auc\n";
  for (const auto& r : table.rows) {
    out << r.label << ',' << r.seed << ',' << r.fold << ',' << auc_cell(r) << '\n';
  }
}

void write_eval_csv(const std::vector<EvalReport>& reports, std::ostream& out) {
  out << "dataset,variant,mean_auc,std_auc,n_predictions\n";
  for (const auto& r : reports) {
    out << r.dataset << ',' << r.variant << ',' << fixed(r.mean_auc) << ',' << fixed(r.std_auc)
        << ',' << r.n_predictions << '\n';
  }
}

void write_summary_csv(const ExperimentTable& table, std::ostream& out) {
  out << table.axis << ",auc_percent,succeeded,failed\n";
  for (const auto& s : table.summary) {
    out << s.label << ',' << (std::isnan(s.mean_auc) ? std::string("failed") : fixed(100.0 * s.mean_auc, 2))
        << ',' << s.succeeded << ',' << s.failed << '\n';
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, int line) {
  if (cell == "nan") return std::nan("");
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used == cell.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError(line, "'" + cell + "' is not a number");
}

}  // namespace

std::vector<EpochRecord> read_history_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,val_loss,val_auc,lr") {
    throw ParseError(1, "expected header epoch,train_loss,val_loss,val_auc,lr");
  }
  std::vector<EpochRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 5) throw ParseError(line_no, "expected 5 columns");
    EpochRecord r;
    r.epoch = static_cast<int>(parse_cell(cells[0], line_no));
    r.train_loss = parse_cell(cells[1], line_no);
    r.val_loss = parse_cell(cells[2], line_no);
    r.val_auc = parse_cell(cells[3], line_no);
    r.lr = parse_cell(cells[4], line_no);
    out.push_back(r);
  }
  return out;
}

ExperimentTable read_experiment_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty experiment CSV");
  const bool is_sweep = line == "axis,value,seed,fold,auc";
  if (!is_sweep && line != "variant,seed,fold,auc") {
    throw ParseError(1, "unrecognised experiment CSV header '" + line + "'");
  }
  ExperimentTable table;
  table.axis = "variant";
  int line_no = 1;
  int variant_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != (is_sweep ? 5u : 4u)) throw ParseError(line_no, "wrong column count");
    if (is_sweep) {
      table.axis = cells[0];
      cells.erase(cells.begin());
    }
    ExperimentRow row;
    row.label = cells[0];
    if (is_sweep) {
      row.value = static_cast<int>(parse_cell(cells[0], line_no));
    } else {
      const bool seen = !table.rows.empty() && table.rows.back().label == row.label;
      if (!table.rows.empty() && !seen) ++variant_index;
      row.value = variant_index;
    }
    row.seed = static_cast<std::uint64_t>(parse_cell(cells[1], line_no));
    row.fold = static_cast<int>(parse_cell(cells[2], line_no));
    row.failed = cells[3] == "failed";
    row.auc = row.failed ? std::nan("") : parse_cell(cells[3], line_no);
    table.rows.push_back(std::move(row));
  }
  table.summary = summarize(table.rows);
  return table;
}

std::vector<std::vector<double>> knowledge_state_matrix(const PredictionTrace& trace,
                                                        int num_concepts) {
  const auto m = static_cast<std::size_t>(num_concepts);
  std::vector<std::vector<double>> matrix(m, std::vector<double>(trace.mastery.size(), 0.0));
  for (std::size_t t = 0; t < trace.mastery.size(); ++t) {
    if (trace.mastery[t].size() != m) {
      throw ValidationError("knowledge state has " + std::to_string(trace.mastery[t].size()) +
                            " entries, expected " + std::to_string(m));
    }
    for (std::size_t c = 0; c < m; ++c) matrix[c][t] = trace.mastery[t][c];
  }
  return matrix;
}

std::string loss_curve_svg(const std::vector<EpochRecord>& history) {
  if (history.empty()) throw ValidationError("cannot plot an empty training history");
  std::vector<double> xs;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> all;
  for (const auto& r : history) {
    xs.push_back(r.epoch);
    train_loss.push_back(r.train_loss);
    val_loss.push_back(r.val_loss);
    all.push_back(r.train_loss);
    if (!std::isnan(r.val_loss)) all.push_back(r.val_loss);
  }
  const Frame f;
  const Range x = Range::of(xs);
  const Range y = Range::of(all);
  std::string svg = svg_open(f, "training loss");
  svg += axes(f, x, y, "epoch", "BCE loss");
  svg += polyline(f, x, y, xs, train_loss, "#1f77b4");
  svg += polyline(f, x, y, xs, val_loss, "#d62728");
  svg += "<text x=\"" + fixed(f.width - 150, 0) + "\" y=\"" + fixed(f.top + 10, 0) +
         "\" fill=\"#1f77b4\">train</text>\n";
  svg += "<text x=\"" + fixed(f.width - 150, 0) + "\" y=\"" + fixed(f.top + 26, 0) +
         "\" fill=\"#d62728\">validation</text>\n";
  svg += "</svg>\n";
  return svg;
}

std::string sweep_svg(const ExperimentTable& table) {
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& s : table.summary) {
    if (std::isnan(s.mean_auc)) continue;
    xs.push_back(s.value);
    ys.push_back(s.mean_auc);
  }
  if (xs.empty()) throw ValidationError("cannot plot a sweep with no successful points");
  const Frame f;
  const Range x = Range::of(xs);
  const Range y = Range::of(ys);
  std::string svg = svg_open(f, "test AUC vs " + table.axis);
  svg += axes(f, x, y, table.axis, "mean test AUC");
  svg += polyline(f, x, y, xs, ys, "#1f77b4");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    svg += "<circle cx=\"" + fixed(x.map(xs[i], f.left, f.left + f.plot_w()), 2) + "\" cy=\"" +
           fixed(y.map(ys[i], f.top + f.plot_h(), f.top), 2) + "\" r=\"3\" fill=\"#1f77b4\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string heatmap_svg(const std::vector<std::vector<double>>& matrix, const std::string& title) {
  if (matrix.empty() || matrix.front().empty()) {
    throw ValidationError("cannot plot an empty knowledge-state matrix");
  }
  const std::size_t rows = matrix.size();
  const std::size_t cols = matrix.front().size();
  const double cell = std::clamp(600.0 / static_cast<double>(std::max(rows, cols)), 4.0, 24.0);
  Frame f;
  f.left = 50;
  f.width = f.left + f.right + cell * static_cast<double>(cols);
  f.height = f.top + f.bottom + cell * static_cast<double>(rows);
  std::ostringstream os;
  os << svg_open(f, title);
  for (std::size_t r = 0; r < rows; ++r) {
    if (matrix[r].size() != cols) throw ValidationError("knowledge-state matrix is ragged");
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = std::clamp(matrix[r][c], 0.0, 1.0);
      // White (0) to dark blue (1).
      const int red = static_cast<int>(std::lround(255 * (1.0 - v)));
      const int green = static_cast<int>(std::lround(255 * (1.0 - 0.7 * v)));
      os << "<rect x=\"" << fixed(f.left + cell * static_cast<double>(c), 2) << "\" y=\""
         << fixed(f.top + cell * static_cast<double>(r), 2) << "\" width=\"" << fixed(cell, 2)
         << "\" height=\"" << fixed(cell, 2) << "\" fill=\"rgb(" << red << ',' << green
         << ",255)\"/>\n";
    }
  }
  os << "<text x=\"" << f.left + cell * static_cast<double>(cols) / 2 << "\" y=\"" << f.height - 10
     << "\" text-anchor=\"middle\">step</text>\n"
     << "<text x=\"16\" y=\"" << f.top + cell * static_cast<double>(rows) / 2
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << f.top + cell * static_cast<double>(rows) / 2 << ")\">concept</text>\n"
     << "</svg>\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw RuntimeFailure("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

std::vector<std::filesystem::path> emit_reports(const ReportInputs& inputs,
                                                const std::filesystem::path& out_dir) {
  // Render everything first so a bad input leaves no partial output behind.
  std::vector<std::pair<std::filesystem::path, std::string>> files;
  auto csv = [](auto writer) {
    std::ostringstream os;
    writer(os);
    return os.str();
  };
  if (inputs.history != nullptr) {
    files.emplace_back("history.csv", csv([&](std::ostream& os) { write_history_csv(*inputs.history, os); }));
    files.emplace_back("loss_curve.svg", loss_curve_svg(*inputs.history));
  }
  if (inputs.sweep != nullptr) {
    files.emplace_back("sweep.csv", csv([&](std::ostream& os) { write_sweep_csv(*inputs.sweep, os); }));
    files.emplace_back("sweep_summary.csv",
                       csv([&](std::ostream& os) { write_summary_csv(*inputs.sweep, os); }));
    files.emplace_back("auc_vs_" + inputs.sweep->axis + ".svg", sweep_svg(*inputs.sweep));
  }
  if (inputs.ablation != nullptr) {
    files.emplace_back("ablation.csv",
                       csv([&](std::ostream& os) { write_ablation_csv(*inputs.ablation, os); }));
    files.emplace_back("ablation_summary.csv",
                       csv([&](std::ostream& os) { write_summary_csv(*inputs.ablation, os); }));
  }
  if (inputs.evaluations != nullptr) {
    files.emplace_back("evaluation.csv",
                       csv([&](std::ostream& os) { write_eval_csv(*inputs.evaluations, os); }));
  }
  if (inputs.heatmap != nullptr) {
    std::ostringstream os;
    os << "concept";
    const std::size_t cols = inputs.heatmap->empty() ? 0 : inputs.heatmap->front().size();
    for (std::size_t t = 0; t < cols; ++t) os << ",t" << t;
    os << '\n';
    for (std::size_t c = 0; c < inputs.heatmap->size(); ++c) {
      os << c;
      for (double v : (*inputs.heatmap)[c]) os << ',' << fixed(v, 6);
      os << '\n';
    }
    files.emplace_back("knowledge_state.csv", os.str());
    files.emplace_back("knowledge_state.svg", heatmap_svg(*inputs.heatmap, inputs.heatmap_title));
  }
  if (files.empty()) throw ValidationError("nothing to report");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw RuntimeFailure("cannot create output directory " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (const auto& [name, text] : files) {
    write_text_file(out_dir / name, text);
    written.push_back(out_dir / name);
  }
  return written;
}

}  // namespace cakt
