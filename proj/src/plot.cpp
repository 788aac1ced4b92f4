#include "crowdnav/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace crowdnav::plot {

namespace {

constexpr double kScale = 60.0;  // pixels per meter
constexpr double kMargin = 1.0;  // meters around the content

const char* const kPalette[] = {"#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2",
                                "#7f7f7f", "#bcbd22", "#17becf", "#ff7f0e", "#aec7e8"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Frame {
  double min_x, max_y;
  double sx(double x) const { return (x - min_x) * kScale; }
  double sy(double y) const { return (max_y - y) * kScale; }
};

std::string star_points(const Frame& f, const Vec2& c, double r) {
  std::string out;
  for (int i = 0; i < 10; ++i) {
    const double radius = i % 2 == 0 ? r : r * 0.45;
    const double a = kPi / 2.0 + i * kPi / 5.0;
    out += fmt(f.sx(c.x + radius * std::cos(a))) + "," + fmt(f.sy(c.y + radius * std::sin(a))) + " ";
  }
  out.pop_back();
  return out;
}

const Sample& sample_at(const std::vector<Sample>& samples, double t) {
  return *std::min_element(samples.begin(), samples.end(), [t](const Sample& a, const Sample& b) {
    return std::abs(a.t - t) < std::abs(b.t - t);
  });
}

}  // namespace

double Trajectory::final_time() const {
  double t = 0.0;
  for (const auto& a : agents) {
    if (!a.empty()) t = std::max(t, a.back().t);
  }
  return t;
}

Trajectory read_trajectory(const std::filesystem::path& path, std::optional<long> episode) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("episode,t,agent", 0) != 0) {
    throw std::runtime_error(path.string() + ": not a trajectory file");
  }
  Trajectory out;
  bool found = false;
  std::map<long, std::vector<Sample>> agents;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        f.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number");
      }
    }
    if (f.size() != 10) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 10 fields");
    const auto ep = static_cast<long>(f[0]);
    if (!episode) episode = ep;
    if (ep != *episode) continue;
    found = true;
    agents[static_cast<long>(f[2])].push_back(Sample{f[1], {f[3], f[4]}, {f[5], f[6]}, f[7], {f[8], f[9]}});
  }
  if (!found) {
    throw std::runtime_error(path.string() + ": no rows for episode " + (episode ? std::to_string(*episode) : "?"));
  }
  out.episode = *episode;
  for (auto& [id, samples] : agents) {
    if (id != static_cast<long>(out.agents.size())) throw std::runtime_error(path.string() + ": agent ids not contiguous");
    out.agents.push_back(std::move(samples));
  }
  return out;
}

std::vector<double> time_labels(double final_time, double every) {
  std::vector<double> out;
  for (int i = 1; i * every < final_time - 1e-9; ++i) out.push_back(i * every);
  if (final_time > 0.0) out.push_back(final_time);
  return out;
}

std::string format_time(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  std::string s = buf;
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

std::string render_svg(const Trajectory& tr) {
  if (tr.agents.empty() || tr.agents[0].empty()) throw std::invalid_argument("render_svg: empty trajectory");
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  double max_x = -min_x;
  double max_y = -min_x;
  auto extend = [&](const Vec2& p) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  };
  for (const auto& a : tr.agents) {
    for (const Sample& s : a) {
      extend(s.position);
      extend(s.goal);
    }
  }
  min_x -= kMargin;
  min_y -= kMargin;
  max_x += kMargin;
  max_y += kMargin;
  const Frame f{min_x, max_y};
  const double width = (max_x - min_x) * kScale;
  const double height = (max_y - min_y) * kScale;
  const std::vector<double> labels = time_labels(tr.final_time());

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" viewBox=\"0 0 " << fmt(width) << " " << fmt(height) << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << fmt(width) << "\" height=\"" << fmt(height) << "\" fill=\"white\"/>\n";

  auto polyline = [&](const std::vector<Sample>& samples, const std::string& cls, const std::string& color) {
    svg << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < samples.size(); ++i) {
      svg << (i ? " " : "") << fmt(f.sx(samples[i].position.x)) << "," << fmt(f.sy(samples[i].position.y));
    }
    svg << "\"/>\n";
  };

  // Humans: trail, intermediate goals, final goal, markers and time labels.
  for (std::size_t h = 1; h < tr.agents.size(); ++h) {
    const auto& samples = tr.agents[h];
    if (samples.empty()) continue;
    const std::string color = kPalette[(h - 1) % std::size(kPalette)];
    svg << "<g class=\"human\" id=\"human-" << h << "\">\n";
    polyline(samples, "human-trail", color);
    std::vector<Vec2> goals;
    for (const Sample& s : samples) {
      if (goals.empty() || (goals.back() - s.goal).norm() > 1e-9) goals.push_back(s.goal);
    }
    for (std::size_t g = 0; g + 1 < goals.size(); ++g) {
      const double half = 0.12;
      svg << "<rect class=\"intermediate-goal\" x=\"" << fmt(f.sx(goals[g].x - half)) << "\" y=\""
          << fmt(f.sy(goals[g].y + half)) << "\" width=\"" << fmt(2 * half * kScale) << "\" height=\""
          << fmt(2 * half * kScale) << "\" fill=\"" << color << "\"/>\n";
    }
    svg << "<polygon class=\"final-goal\" points=\"" << star_points(f, goals.back(), 0.2) << "\" fill=\"" << color
        << "\"/>\n";
    for (double t : labels) {
      const Sample& s = sample_at(samples, t);
      svg << "<circle class=\"human-marker\" cx=\"" << fmt(f.sx(s.position.x)) << "\" cy=\"" << fmt(f.sy(s.position.y))
          << "\" r=\"" << fmt(s.radius * kScale) << "\" fill=\"none\" stroke=\"" << color << "\"/>\n";
      svg << "<text class=\"time-label\" x=\"" << fmt(f.sx(s.position.x) + 4) << "\" y=\"" << fmt(f.sy(s.position.y) - 4)
          << "\" font-size=\"11\" fill=\"" << color << "\">" << format_time(t) << "</text>\n";
    }
    svg << "</g>\n";
  }

  // Robot on top.
  const auto& robot = tr.agents[0];
  svg << "<g class=\"robot\">\n";
  polyline(robot, "robot-trail", "#d62728");
  svg << "<polygon class=\"robot-goal\" points=\"" << star_points(f, robot.back().goal, 0.25)
      << "\" fill=\"#d62728\"/>\n";
  std::vector<Vec2> marked;
  for (double t : labels) {
    const Sample& s = sample_at(robot, t);
    const bool seen = std::any_of(marked.begin(), marked.end(),
                                  [&](const Vec2& p) { return (p - s.position).norm() < 1e-9; });
    if (!seen) {
      marked.push_back(s.position);
      svg << "<circle class=\"robot-marker\" cx=\"" << fmt(f.sx(s.position.x)) << "\" cy=\"" << fmt(f.sy(s.position.y))
          << "\" r=\"" << fmt(s.radius * kScale) << "\" fill=\"#d62728\" fill-opacity=\"0.3\" stroke=\"#d62728\"/>\n";
    }
    svg << "<text class=\"time-label\" x=\"" << fmt(f.sx(s.position.x) + 4) << "\" y=\"" << fmt(f.sy(s.position.y) - 4)
        << "\" font-size=\"12\" font-weight=\"bold\" fill=\"#d62728\">" << format_time(t) << "</text>\n";
  }
  if (labels.empty()) {
    const Sample& s = robot.front();
    svg << "<circle class=\"robot-marker\" cx=\"" << fmt(f.sx(s.position.x)) << "\" cy=\"" << fmt(f.sy(s.position.y))
        << "\" r=\"" << fmt(s.radius * kScale) << "\" fill=\"#d62728\" fill-opacity=\"0.3\" stroke=\"#d62728\"/>\n";
  }
  svg << "</g>\n";
  svg << "</svg>\n";
  return svg.str();
}

void plot_file(const std::filesystem::path& trajectory_csv, const std::filesystem::path& svg_out,
               std::optional<long> episode) {
  const Trajectory tr = read_trajectory(trajectory_csv, episode);
  if (svg_out.has_parent_path()) std::filesystem::create_directories(svg_out.parent_path());
  std::ofstream out(svg_out, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + svg_out.string());
  out << render_svg(tr);
}

}  // namespace crowdnav::plot
