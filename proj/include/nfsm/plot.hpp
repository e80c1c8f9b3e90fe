#pragma once

// Timeline ribbons as standalone SVG: one row per label sequence, one
// filled path per maximal constant-label run.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "nfsm/error.hpp"

namespace nfsm {

struct Ribbon {
  std::string title;
  std::vector<std::size_t> labels;
};

inline constexpr const char* kPhasePalette[8] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
                                                 "#59a14f", "#edc948", "#b07aa1", "#9c755f"};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string render_timeline_svg(const std::vector<Ribbon>& ribbons, const std::string& caption = "") {
  if (ribbons.empty()) throw ArgumentError("plot: nothing to draw");
  const std::size_t frames = ribbons[0].labels.size();
  if (frames == 0) throw ArgumentError("plot: empty label sequence");
  for (const auto& r : ribbons)
    if (r.labels.size() != frames) throw ArgumentError("plot: ribbons differ in length (" + r.title + ")");

  constexpr double left = 140.0, width = 900.0, row_h = 22.0, gap = 10.0, top = 30.0;
  const double px = width / static_cast<double>(frames);
  const double height = top + static_cast<double>(ribbons.size()) * (row_h + gap) + 40.0;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(left + width + 20) << "\" height=\"" << num(height)
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  if (!caption.empty()) os << "<text x=\"" << num(left) << "\" y=\"18\">" << xml_escape(caption) << "</text>\n";
  for (std::size_t r = 0; r < ribbons.size(); ++r) {
    const double y = top + static_cast<double>(r) * (row_h + gap);
    os << "<text x=\"4\" y=\"" << num(y + row_h * 0.7) << "\">" << xml_escape(ribbons[r].title) << "</text>\n";
    os << "<g class=\"ribbon\" transform=\"translate(" << num(left) << "," << num(y) << ")\">\n";
    const auto& l = ribbons[r].labels;
    for (std::size_t start = 0; start < frames;) {
      std::size_t end = start;
      while (end < frames && l[end] == l[start]) ++end;
      os << "<path class=\"segment\" fill=\"" << kPhasePalette[l[start] % 8] << "\" d=\"M" << num(px * static_cast<double>(start))
         << " 0H" << num(px * static_cast<double>(end)) << "V" << num(row_h) << "H" << num(px * static_cast<double>(start))
         << "Z\"/>\n";
      start = end;
    }
    os << "</g>\n";
  }
  const double axis_y = top + static_cast<double>(ribbons.size()) * (row_h + gap);
  os << "<g class=\"axis\" transform=\"translate(" << num(left) << "," << num(axis_y) << ")\">\n"
     << "<path stroke=\"#333\" fill=\"none\" d=\"M0 0H" << num(width) << "\"/>\n";
  const std::size_t step = frames <= 10 ? 1 : frames / 10;
  for (std::size_t t = 0; t <= frames; t += step) {
    os << "<path stroke=\"#333\" d=\"M" << num(px * static_cast<double>(t)) << " 0V5\"/>"
       << "<text x=\"" << num(px * static_cast<double>(t)) << "\" y=\"18\" text-anchor=\"middle\">" << t << "</text>\n";
  }
  os << "<text x=\"" << num(width / 2) << "\" y=\"34\" text-anchor=\"middle\">frame</text>\n</g>\n</svg>\n";
  return os.str();
}

}  // namespace nfsm
