#include "modbot/design/design.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace modbot::design {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

[[noreturn]] void fail_line(int line, const std::string& what) {
  throw DesignError("design line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& s, int line, const std::string& key) {
  double v = 0.0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    fail_line(line, "bad numeric value for " + key + ": '" + s + "'");
  return v;
}

// Splits "key=value", failing on anything else.
std::pair<std::string, std::string> parse_kv(const std::string& tok, int line) {
  const auto eq = tok.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= tok.size())
    fail_line(line, "expected key=value, got '" + tok + "'");
  return {tok.substr(0, eq), tok.substr(eq + 1)};
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Keep integral values short; they round-trip regardless.
  double rounded = 0.0;
  if (std::modf(v, &rounded) == 0.0 && std::abs(v) < 1e15)
    std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

DesignGraph from_text(const std::string& text, const std::string& name) {
  bool seen_body = false;
  double body_length = geom::kBodyLength;
  std::vector<ModuleNode> limbs;

  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    raw = trim(raw);
    if (raw.empty()) continue;

    const auto toks = split_ws(raw);
    if (toks[0] == "body") {
      if (seen_body) fail_line(line, "more than one body declaration");
      seen_body = true;
      for (size_t i = 1; i < toks.size(); ++i) {
        const auto [key, value] = parse_kv(toks[i], line);
        if (key == "length") {
          body_length = parse_double(value, line, key);
          if (!(body_length > 0.0)) fail_line(line, "body length must be positive");
        } else {
          fail_line(line, "unknown body attribute '" + key + "'");
        }
      }
    } else if (toks[0] == "limb") {
      ModuleNode limb;
      bool has_kind = false;
      bool has_x = false;
      for (size_t i = 1; i < toks.size(); ++i) {
        const auto [key, value] = parse_kv(toks[i], line);
        if (key == "kind") {
          if (value == "leg") {
            limb.kind = ModuleKind::kLeg;
          } else if (value == "wheel") {
            limb.kind = ModuleKind::kWheel;
          } else {
            fail_line(line, "unknown limb kind '" + value + "'");
          }
          has_kind = true;
        } else if (key == "x") {
          limb.attachment_x = parse_double(value, line, key);
          has_x = true;
        } else {
          fail_line(line, "unknown limb attribute '" + key + "'");
        }
      }
      if (!has_kind) fail_line(line, "limb missing kind");
      if (!has_x) fail_line(line, "limb missing x");
      limbs.push_back(limb);
    } else {
      fail_line(line, "unknown declaration '" + toks[0] + "'");
    }
  }
  if (!seen_body) throw DesignError("design '" + name + "': no body declaration");
  return make_design(name, body_length, std::move(limbs));
}

std::vector<DesignGraph> parse_builtins(
    const std::vector<std::pair<const char*, const char*>>& table) {
  std::vector<DesignGraph> out;
  out.reserve(table.size());
  for (const auto& [name, text] : table) out.push_back(parse_design(text, name));
  return out;
}

}  // namespace

const char* kind_name(ModuleKind k) {
  switch (k) {
    case ModuleKind::kBody: return "body";
    case ModuleKind::kLeg: return "leg";
    case ModuleKind::kWheel: return "wheel";
  }
  return "?";
}

int joints_of(ModuleKind k) {
  switch (k) {
    case ModuleKind::kBody: return 0;
    case ModuleKind::kLeg: return 2;
    case ModuleKind::kWheel: return 1;
  }
  return 0;
}

int DesignGraph::joint_count() const {
  int n = 0;
  for (const auto& node : nodes) n += joints_of(node.kind);
  return n;
}

int DesignGraph::joint_offset(int node) const {
  int off = 0;
  for (int i = 0; i < node; ++i) off += joints_of(nodes[i].kind);
  return off;
}

DesignGraph make_design(std::string name, double body_length, std::vector<ModuleNode> limbs) {
  if (!(body_length > 0.0))
    throw DesignError("design '" + name + "': body length must be positive");
  const double half = body_length / 2.0;
  for (const auto& limb : limbs) {
    if (limb.kind == ModuleKind::kBody)
      throw DesignError("design '" + name + "': limb cannot be a body");
    if (!(limb.attachment_x >= -half) || !(limb.attachment_x <= half))
      throw DesignError("design '" + name + "': attachment x=" +
                        format_double(limb.attachment_x) + " outside [-" +
                        format_double(half) + ", " + format_double(half) + "]");
  }
  std::sort(limbs.begin(), limbs.end(), [](const ModuleNode& a, const ModuleNode& b) {
    if (a.attachment_x != b.attachment_x) return a.attachment_x < b.attachment_x;
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
  for (size_t i = 1; i < limbs.size(); ++i) {
    if (limbs[i].kind == limbs[i - 1].kind &&
        limbs[i].attachment_x == limbs[i - 1].attachment_x)
      throw DesignError("design '" + name + "': duplicate " +
                        std::string(kind_name(limbs[i].kind)) + " at x=" +
                        format_double(limbs[i].attachment_x));
  }

  DesignGraph d;
  d.name = std::move(name);
  d.body_length = body_length;
  d.nodes.push_back(ModuleNode{ModuleKind::kBody, 0.0});
  d.nodes.insert(d.nodes.end(), limbs.begin(), limbs.end());
  return d;
}

DesignGraph parse_design(const std::string& text, const std::string& name) {
  return from_text(text, name);
}

std::string serialize(const DesignGraph& d) {
  std::string out = "body length=" + format_double(d.body_length) + "\n";
  for (int i = 1; i < d.node_count(); ++i) {
    const auto& limb = d.nodes[i];
    out += "limb kind=" + std::string(kind_name(limb.kind)) +
           " x=" + format_double(limb.attachment_x) + "\n";
  }
  return out;
}

const std::vector<DesignGraph>& builtin_train_designs() {
  static const std::vector<DesignGraph> designs = parse_builtins({
      {"wheels-front",
       "body length=1.0\n"
       "limb kind=leg x=-0.4\n"
       "limb kind=leg x=0.0\n"
       "limb kind=wheel x=0.4\n"},
      {"wheels-mid",
       "body length=1.0\n"
       "limb kind=leg x=-0.4\n"
       "limb kind=wheel x=0.0\n"
       "limb kind=leg x=0.4\n"},
      {"wheels-rear",
       "body length=1.0\n"
       "limb kind=wheel x=-0.4\n"
       "limb kind=leg x=0.0\n"
       "limb kind=leg x=0.4\n"},
  });
  return designs;
}

const std::vector<DesignGraph>& builtin_test_designs() {
  static const std::vector<DesignGraph> designs = parse_builtins({
      {"all-legs",
       "body length=1.0\n"
       "limb kind=leg x=-0.4\n"
       "limb kind=leg x=0.0\n"
       "limb kind=leg x=0.4\n"},
      {"wheels-outer",
       "body length=1.0\n"
       "limb kind=wheel x=-0.4\n"
       "limb kind=leg x=0.0\n"
       "limb kind=wheel x=0.4\n"},
      {"wheel-offset",
       "body length=1.0\n"
       "limb kind=leg x=-0.4\n"
       "limb kind=wheel x=0.2\n"
       "limb kind=leg x=0.4\n"},
  });
  return designs;
}

std::vector<double> nominal_stance(const DesignGraph& d) {
  std::vector<double> q(d.joint_count(), 0.0);
  const double knee = geom::nominal_knee();
  for (int i = 1; i < d.node_count(); ++i) {
    if (d.nodes[i].kind == ModuleKind::kLeg) q[d.joint_offset(i) + 1] = knee;
  }
  return q;
}

std::vector<double> stance_weight(const DesignGraph& d) {
  std::vector<double> w(d.joint_count(), 0.0);
  for (int i = 1; i < d.node_count(); ++i) {
    if (d.nodes[i].kind == ModuleKind::kLeg) {
      w[d.joint_offset(i)] = 1.0;
      w[d.joint_offset(i) + 1] = 1.0;
    }
  }
  return w;
}

std::vector<double> joint_lower_limits(const DesignGraph& d) {
  std::vector<double> lo(d.joint_count(), 0.0);
  constexpr double kUnbounded = -1e18;
  for (int i = 1; i < d.node_count(); ++i) {
    const int off = d.joint_offset(i);
    if (d.nodes[i].kind == ModuleKind::kLeg) {
      lo[off] = -geom::kHipLimit;
      lo[off + 1] = -geom::kKneeLimit;
    } else {
      lo[off] = kUnbounded;
    }
  }
  return lo;
}

std::vector<double> joint_upper_limits(const DesignGraph& d) {
  std::vector<double> hi(d.joint_count(), 0.0);
  constexpr double kUnbounded = 1e18;
  for (int i = 1; i < d.node_count(); ++i) {
    const int off = d.joint_offset(i);
    if (d.nodes[i].kind == ModuleKind::kLeg) {
      hi[off] = geom::kHipLimit;
      hi[off + 1] = geom::kKneeLimit;
    } else {
      hi[off] = kUnbounded;
    }
  }
  return hi;
}

std::vector<std::pair<int, double>> structure_key(const DesignGraph& d) {
  std::vector<std::pair<int, double>> key;
  for (int i = 1; i < d.node_count(); ++i)
    key.emplace_back(static_cast<int>(d.nodes[i].kind), d.nodes[i].attachment_x);
  std::sort(key.begin(), key.end());
  return key;
}

}  // namespace modbot::design
