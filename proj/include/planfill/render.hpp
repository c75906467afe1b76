#ifndef PLANFILL_RENDER_HPP
#define PLANFILL_RENDER_HPP

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "planfill/decoder.hpp"

namespace planfill {

// Static SVG view of a decode trace: one cell per generated token, shaded by
// acceptance time (darker = earlier), slots outlined and annotated with their
// generation-order index. Force-accepted tokens get a red tick.
inline std::string render_trace_svg(const DecodeTrace& trace, int wrap = 16) {
  const int cell = 28;
  const int pad = 40;
  if (trace.tokens.empty()) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"80\" height=\"40\">"
           "<text x=\"4\" y=\"20\">empty trace</text></svg>";
  }

  Pos min_pos = trace.tokens.front().pos;
  int min_iter = trace.tokens.front().iter;
  int max_iter = min_iter;
  for (const auto& t : trace.tokens) {
    min_pos = std::min(min_pos, t.pos);
    min_iter = std::min(min_iter, t.iter);
    max_iter = std::max(max_iter, t.iter);
  }

  const int slot_size =
      trace.slots.empty()
          ? 1
          : static_cast<int>(trace.tokens.size() / trace.slots.size());
  if (wrap < slot_size) wrap = slot_size;
  wrap -= wrap % std::max(1, slot_size);  // keep slots unbroken across rows

  auto cell_x = [&](Pos p) { return pad + ((p - min_pos) % wrap) * cell; };
  auto cell_y = [&](Pos p) { return pad + ((p - min_pos) / wrap) * cell; };

  Pos max_pos = min_pos;
  for (const auto& t : trace.tokens) max_pos = std::max(max_pos, t.pos);
  const int width = pad * 2 + wrap * cell;
  const int height = pad * 2 + ((max_pos - min_pos) / wrap + 1) * cell;

  std::set<Pos> forced_pos;
  for (const auto& s : trace.slots) {
    for (int f : s.forced) forced_pos.insert(s.origin + f);
  }

  std::string svg;
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "font-family=\"monospace\" font-size=\"11\">\n",
                width, height);
  svg += buf;

  for (const auto& t : trace.tokens) {
    const double frac =
        max_iter > min_iter
            ? static_cast<double>(t.iter - min_iter) / (max_iter - min_iter)
            : 0.0;
    const int shade = 60 + static_cast<int>(160.0 * frac);  // earlier = darker
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                  "fill=\"rgb(%d,%d,255)\" stroke=\"#ccc\"/>\n",
                  cell_x(t.pos), cell_y(t.pos), cell, cell, shade, shade);
    svg += buf;
    if (forced_pos.count(t.pos)) {
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%d\" cy=\"%d\" r=\"3\" fill=\"red\"/>\n",
                    cell_x(t.pos) + cell - 6, cell_y(t.pos) + 6);
      svg += buf;
    }
  }

  // Generation-order annotation: rank slots by commit iteration, then origin.
  std::vector<DecodeTrace::SlotRecord> order = trace.slots;
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) {
              return a.iteration != b.iteration ? a.iteration < b.iteration
                                                : a.origin < b.origin;
            });
  for (size_t i = 0; i < order.size(); ++i) {
    const auto& s = order[i];
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"none\" "
                  "stroke=\"black\" stroke-width=\"2\"/>\n",
                  cell_x(s.origin), cell_y(s.origin), cell * slot_size, cell);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" fill=\"black\">%zu</text>\n",
                  cell_x(s.origin) + 2, cell_y(s.origin) + 11, i + 1);
    svg += buf;
  }

  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\">forwards=%ld tokens=%ld tpf=%.3f</text>\n",
                pad, height - 12, trace.forwards, trace.tokens_total, trace.tpf());
  svg += buf;
  svg += "</svg>\n";
  return svg;
}

}  // namespace planfill

#endif  // PLANFILL_RENDER_HPP
