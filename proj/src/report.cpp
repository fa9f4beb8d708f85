#include "mmrl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace mmrl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string mmd_curve_svg(const std::string& title, const std::vector<CurveSeries>& series) {
  constexpr double W = 480, H = 320, L = 70, R = 110, T = 36, B = 46;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      xmin = std::min(xmin, p.n);
      xmax = std::max(xmax, p.n);
      ymin = std::min(ymin, p.mean - p.standard_error);
      ymax = std::max(ymax, p.mean + p.standard_error);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 1, xmax += 1;
  if (ymax == ymin) ymin -= 1e-3, ymax += 1e-3;
  const double pad = 0.08 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  static const char* colors[] = {"#c0392b", "#27ae60", "#2c7fb8", "#8e44ad", "#d35400"};

  std::ostringstream o;
  o << std::setprecision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">MMD^2 within domain: " << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << y << "</text>\n";
    o << "<line x1=\"" << L - 3 << "\" y1=\"" << py(y) << "\" x2=\"" << L << "\" y2=\"" << py(y) << "\" stroke=\"black\"/>\n";
  }
  std::vector<double> ticks;
  for (const auto& s : series) {
    for (const auto& p : s.points) ticks.push_back(p.n);
  }
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double x : ticks) {
    o << "<text x=\"" << px(x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << x << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">N</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* c = colors[i % 5];
    const auto& s = series[i];
    std::ostringstream pts;
    pts << std::setprecision(6);
    for (const auto& p : s.points) {
      pts << px(p.n) << ',' << py(p.mean) << ' ';
      o << "<line x1=\"" << px(p.n) << "\" y1=\"" << py(p.mean - p.standard_error) << "\" x2=\"" << px(p.n) << "\" y2=\""
        << py(p.mean + p.standard_error) << "\" stroke=\"" << c << "\"/>\n";
      o << "<circle cx=\"" << px(p.n) << "\" cy=\"" << py(p.mean) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" fill=\"" << c << "\">" << s.label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

namespace {

struct RunInfo {
  fs::path dir;
  json config;
  json metrics;
  std::string command() const { return config.value("command", std::string()); }
};

std::string fixed(double v, int digits = 3) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

std::string pm(const json& task) {
  return fixed(task.at("accuracy").get<double>()) + " ± " + fixed(task.at("standard_error").get<double>());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string run_label(const RunInfo& r) { return "`" + r.dir.filename().string() + "`"; }

void dataset_section(std::ostringstream& md, const std::vector<RunInfo>& runs) {
  md << "## Dataset\n\n";
  bool any = false;
  for (const auto& r : runs) {
    if (r.command() != "build-dataset") continue;
    if (!any) md << "| run | lambda | train | val | test | popular (train) | reliable (train) |\n|---|---|---|---|---|---|---|\n";
    any = true;
    const auto& m = r.metrics;
    md << "| " << run_label(r) << " | " << m.at("lambda").get<double>() << " | " << m.at("train").at("articles") << " | "
       << m.at("val").at("articles") << " | " << m.at("test").at("articles") << " | " << m.at("train").at("popular")
       << " | " << m.at("train").at("reliable") << " |\n";
  }
  if (!any) md << "_No build-dataset runs._\n";
  md << "\n";
}

void classification_sections(std::ostringstream& md, const std::vector<RunInfo>& runs) {
  std::vector<const RunInfo*> evals;
  for (const auto& r : runs) {
    if (r.command() == "eval") evals.push_back(&r);
  }
  md << "## Table 1: Multi-task classification\n\n";
  bool any = false;
  for (const auto* r : evals) {
    if (r->metrics.at("modalities") != "image,title,tweet") continue;
    if (!any) md << "| run | split | n | popularity acc. | reliability acc. |\n|---|---|---|---|---|\n";
    any = true;
    const auto& res = r->metrics.at("result");
    md << "| " << run_label(*r) << " | " << r->metrics.at("split").get<std::string>() << " | " << res.at("n") << " | "
       << pm(res.at("popularity")) << " | " << pm(res.at("reliability")) << " |\n";
  }
  if (!any) md << "_No evaluation runs with all modalities._\n";
  md << "\nAccuracy at threshold 0.5, ± binomial standard error.\n\n";

  md << "## Table 3: Modality ablation\n\n";
  if (evals.empty()) {
    md << "_No evaluation runs._\n\n";
    return;
  }
  md << "| modalities | split | popularity acc. | reliability acc. | run |\n|---|---|---|---|---|\n";
  auto sorted = evals;
  std::stable_sort(sorted.begin(), sorted.end(), [](const RunInfo* a, const RunInfo* b) {
    return a->metrics.at("modalities").get<std::string>() < b->metrics.at("modalities").get<std::string>();
  });
  for (const auto* r : sorted) {
    const auto& res = r->metrics.at("result");
    md << "| " << r->metrics.at("modalities").get<std::string>() << " | " << r->metrics.at("split").get<std::string>()
       << " | " << pm(res.at("popularity")) << " | " << pm(res.at("reliability")) << " | " << run_label(*r) << " |\n";
  }
  md << "\n";
}

void crossdomain_section(std::ostringstream& md, const std::vector<RunInfo>& runs) {
  md << "## Table 4: Cross-domain retrieval\n\n";
  // Latest run per (train, test) pair.
  std::map<std::pair<std::string, std::string>, const RunInfo*> cells;
  for (const auto& r : runs) {
    if (r.command() != "retrieve") continue;
    cells[{r.metrics.at("train_domain").get<std::string>(), r.metrics.at("test_domain").get<std::string>()}] = &r;
  }
  if (cells.empty()) {
    md << "_No retrieval runs._\n\n";
    return;
  }
  md << "| train | test | K | accuracy | run |\n|---|---|---|---|---|\n";
  for (const auto& [key, r] : cells) {
    const auto& res = r->metrics.at("result");
    for (std::size_t i = 0; i < res.at("ks").size(); ++i) {
      md << "| " << key.first << " | " << key.second << " | " << res.at("ks")[i] << "-way | "
         << fixed(res.at("accuracy")[i].get<double>()) << " ± " << fixed(res.at("standard_error")[i].get<double>())
         << " | " << run_label(*r) << " |\n";
    }
  }
  md << "\n";
  const std::array<std::string, 2> names{"red", "green"};
  bool complete = true;
  json ks;
  for (const auto& a : names) {
    for (const auto& b : names) {
      auto it = cells.find({a, b});
      if (it == cells.end()) {
        complete = false;
        continue;
      }
      const auto& k = it->second->metrics.at("result").at("ks");
      if (ks.is_null()) ks = k;
      complete = complete && k == ks;
    }
  }
  if (!complete) {
    md << "_The relative-difference grid needs red and green embedders each tested on both domains._\n\n";
    return;
  }
  CrossDomainResult grid;
  grid.ks = ks.get<std::vector<int>>();
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t b = 0; b < 2; ++b) {
      const auto& res = cells.at({names[a], names[b]})->metrics.at("result");
      for (std::size_t i = 0; i < grid.ks.size(); ++i) {
        grid.accuracy[a][b].push_back({res.at("accuracy")[i].get<double>(), res.at("standard_error")[i].get<double>()});
      }
    }
  }
  md << "```\n" << format_table(grid) << "```\n\n";
  md << "Relative difference = (other-domain accuracy - same-domain accuracy) / same-domain accuracy.\n\n";
}

void token_section(std::ostringstream& md, const std::vector<RunInfo>& runs) {
  md << "## Table 5: Tokens with the largest average attention\n\n";
  bool any = false;
  for (const auto& r : runs) {
    if (r.command() != "token-report") continue;
    any = true;
    md << "From " << run_label(r) << " (" << r.metrics.at("split").get<std::string>() << " split):\n\n```\n"
       << read_file(r.dir / "token_report.txt") << "```\n\n";
  }
  if (!any) md << "_No token-report runs._\n\n";
}

void mmd_section(std::ostringstream& md, const std::vector<RunInfo>& runs, const fs::path& out_dir) {
  md << "## Figure 5: Within-domain MMD^2\n\n";
  bool any = false;
  for (const auto& r : runs) {
    if (r.command() != "mmd") continue;
    any = true;
    md << "From " << run_label(r) << ".\n\n| N | domain | input | mean MMD^2 | stderr |\n|---|---|---|---|---|\n";
    for (const auto& e : r.metrics.at("results")) {
      const auto& p = e.at("protocol");
      md << "| " << p.at("n") << " | " << e.at("domain").get<std::string>() << " | " << e.at("kind").get<std::string>()
         << " | " << fixed(p.at("mean").get<double>(), 6) << " | " << fixed(p.at("stderr").get<double>(), 6) << " |\n";
    }
    md << "\n";
    if (!r.metrics.at("t_tests").empty()) {
      md << "| input | N | t | df | p |\n|---|---|---|---|---|\n";
      for (const auto& t : r.metrics.at("t_tests")) {
        md << "| " << t.at("kind").get<std::string>() << " | " << t.at("n") << " | " << fixed(t.at("t").get<double>(), 3)
           << " | " << t.at("df") << " | " << t.at("p").get<double>() << " |\n";
      }
      md << "\nPooled-variance two-sample t-test between domains, df = 2 x repeats - 2.\n\n";
    }
    for (const auto& plot : r.metrics.at("plots")) {
      const auto name = plot.get<std::string>();
      fs::copy_file(r.dir / name, out_dir / name, fs::copy_options::overwrite_existing);
      md << "![" << name << "](" << name << ")\n\n" << read_file(r.dir / name) << "\n";
    }
  }
  if (!any) md << "_No MMD runs._\n\n";
}

void saliency_section(std::ostringstream& md, const std::vector<RunInfo>& runs) {
  md << "## Saliency maps\n\n";
  bool any = false;
  for (const auto& r : runs) {
    if (r.command() != "saliency") continue;
    any = true;
    md << "- " << r.metrics.at("article_id").get<std::string>() << ", " << r.metrics.at("task").get<std::string>() << " / "
       << r.metrics.at("class").get<std::string>() << ":";
    for (const auto& m : r.metrics.at("maps")) {
      md << " " << m.at("input").get<std::string>() << " " << m.at("method").get<std::string>() << " (`"
         << (r.dir / m.at("overlay").get<std::string>()).string() << "`)";
    }
    md << "\n";
  }
  if (!any) md << "_No saliency runs._\n";
  md << "\n";
}

}  // namespace

std::string build_report(std::span<const fs::path> dirs, const fs::path& out_dir) {
  std::vector<RunInfo> runs;
  for (const auto& d : dirs) {
    std::ifstream c(d / "config.json"), m(d / "metrics.json");
    if (!c || !m) throw LookupError(d.string() + " is not a finished run directory");
    runs.push_back({d, json::parse(c), json::parse(m)});
  }
  std::ostringstream md;
  md << "# Experiment report\n\n";
  md << "| run | command | config hash |\n|---|---|---|\n";
  for (const auto& r : runs) {
    md << "| " << run_label(r) << " | " << r.command() << " | `" << r.config.value("config_hash", std::string()) << "` |\n";
  }
  md << "\n";
  dataset_section(md, runs);
  classification_sections(md, runs);
  crossdomain_section(md, runs);
  token_section(md, runs);
  mmd_section(md, runs, out_dir);
  saliency_section(md, runs);
  return md.str();
}

}  // namespace mmrl
