#pragma once

// Minimal SVG writer for report figures.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cliptime/common.hpp"

namespace cliptime {

class Svg {
 public:
  Svg(double width, double height) : width_(width), height_(height) {}

  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
  }

  static std::string escape(const std::string& s) {
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

  void raw(const std::string& element) { body_ << element << '\n'; }

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke) {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
          << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke
          << "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
          << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r)
          << "\" fill=\"" << fill << "\" fill-opacity=\"0.7\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) body_ << num(x) << ',' << num(y) << ' ';
    body_ << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size, const std::string& anchor,
            const std::string& fill = "#000") {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\" fill=\"" << fill
          << "\">" << escape(s) << "</text>\n";
  }

  void vtext(double x, double y, const std::string& s, int size) {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" text-anchor=\"middle\" transform=\"rotate(-90 "
          << num(x) << ' ' << num(y) << ")\">" << escape(s) << "</text>\n";
  }

  void image(double x, double y, double w, double h, const std::string& href) {
    body_ << "<image x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
          << "\" height=\"" << num(h) << "\" style=\"image-rendering:pixelated\" href=\""
          << href << "\"/>\n";
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_)
        << "\" height=\"" << num(height_) << "\" viewBox=\"0 0 " << num(width_) << ' '
        << num(height_) << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n"
        << body_.str() << "</svg>\n";
  }

 private:
  double width_;
  double height_;
  std::ostringstream body_;
};

}  // namespace cliptime
