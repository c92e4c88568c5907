#pragma once

#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "polycert/dynamics.hpp"
#include "polycert/embedding.hpp"
#include "polycert/lifted.hpp"
#include "polycert/neural.hpp"
#include "polycert/scalar.hpp"
#include "polycert/trainer.hpp"

namespace polycert::io {

using nlohmann::json;

// Shortest round-trip decimal form, so repeated runs emit identical bytes.
inline std::string format_double(double v) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw config_error("bad JSON in " + path + ": " + e.what());
  }
}

inline void save_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot write " + path);
  out << text;
  if (!out) throw config_error("failed writing " + path);
}

inline void save_json(const std::string& path, const json& j) { save_text(path, j.dump(2) + "\n"); }

// ---- strict parsing helpers: unknown keys are configuration errors ----

inline void expect_object(const json& v, const std::string& where) {
  if (!v.is_object()) throw config_error(where + ": expected an object");
}

inline void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed,
                           const std::string& where) {
  expect_object(obj, where);
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const std::string_view a : allowed) {
      if (item.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) throw config_error(where + ": unknown key \"" + item.key() + "\"");
  }
}

inline const json& member(const json& obj, const char* key, const std::string& where) {
  expect_object(obj, where);
  const auto it = obj.find(key);
  if (it == obj.end()) throw config_error(where + ": missing key \"" + key + "\"");
  return *it;
}

inline const json* optional_member(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline double as_double(const json& v, const std::string& where) {
  if (!v.is_number()) throw config_error(where + ": expected a number");
  return v.get<double>();
}

inline bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw config_error(where + ": expected a boolean");
  return v.get<bool>();
}

inline std::size_t as_size(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<double>() < 0.0) {
    throw config_error(where + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

inline std::uint64_t as_u64(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<double>() < 0.0) {
    throw config_error(where + ": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw config_error(where + ": expected a string");
  return v.get<std::string>();
}

inline std::vector<double> as_vector(const json& v, const std::string& where) {
  if (!v.is_array()) throw config_error(where + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(as_double(e, where));
  return out;
}

inline Mat<double> as_matrix(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw config_error(where + ": expected a non-empty 2-D array");
  std::vector<std::vector<double>> rows;
  rows.reserve(v.size());
  for (const auto& r : v) {
    rows.push_back(as_vector(r, where));
    if (rows.back().size() != rows.front().size()) {
      throw config_error(where + ": ragged rows");
    }
  }
  Mat<double> m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < m.r; ++i) {
    for (std::size_t j = 0; j < m.c; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

// ---- network files: {"layers": [{"W": [[..]], "b": [..]}, ...]} ----

inline json network_to_json(const Mlp<double>& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    json W = json::array();
    for (std::size_t i = 0; i < net.W[l].r; ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < net.W[l].c; ++j) row.push_back(net.W[l](i, j));
      W.push_back(std::move(row));
    }
    layers.push_back(json{{"W", std::move(W)}, {"b", net.b[l]}});
  }
  return json{{"layers", std::move(layers)}};
}

inline Mlp<double> network_from_json(const json& j, const std::string& where) {
  reject_unknown(j, {"layers"}, where);
  const json& layers = member(j, "layers", where);
  if (!layers.is_array() || layers.empty()) {
    throw config_error(where + ": layers must be a non-empty array");
  }
  Mlp<double> net;
  for (const auto& layer : layers) {
    reject_unknown(layer, {"W", "b"}, where + ".layers");
    Mat<double> W = as_matrix(member(layer, "W", where), where + ".W");
    std::vector<double> b = as_vector(member(layer, "b", where), where + ".b");
    if (b.size() != W.r) throw config_error(where + ": bias length does not match W rows");
    if (!net.W.empty() && W.c != net.W.back().r) {
      throw config_error(where + ": layer widths do not chain");
    }
    net.W.push_back(std::move(W));
    net.b.push_back(std::move(b));
  }
  return net;
}

// ---- lifting offset files: {"eta": [[..]]} with n x (m-n) entries ----

inline json eta_to_json(const Mat<double>& eta) {
  json rows = json::array();
  for (std::size_t i = 0; i < eta.r; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < eta.c; ++j) row.push_back(eta(i, j));
    rows.push_back(std::move(row));
  }
  return json{{"eta", std::move(rows)}};
}

inline Mat<double> eta_from_json(const json& j, const std::string& where) {
  reject_unknown(j, {"eta"}, where);
  const json& v = member(j, "eta", where);
  if (!v.is_array() || v.empty()) throw config_error(where + ": eta must be a 2-D array");
  std::vector<std::vector<double>> rows;
  for (const auto& r : v) {
    rows.push_back(as_vector(r, where));
    if (rows.back().size() != rows.front().size()) throw config_error(where + ": ragged rows");
  }
  Mat<double> m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < m.r; ++i) {
    for (std::size_t j = 0; j < m.c; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

// ---- result files ----

inline json certificate_to_json(const Certificate& c) {
  return json{{"certified", c.certified},
              {"lower_field", c.lower_field},
              {"upper_field", c.upper_field},
              {"margin", c.margin}};
}

inline json report_to_json(const TrainReport& r) {
  return json{{"status", r.status == TrainStatus::certified ? "certified" : "not_certified"},
              {"iterations", r.iterations},
              {"adam_steps", r.adam_steps},
              {"margin", r.certificate.margin},
              {"best_margin", r.best_margin},
              {"wall_time_s", r.wall_time_s}};
}

inline json refined_box_to_json(const IntervalVector<double>& box) {
  return json{{"lo", box.lo}, {"hi", box.hi}};
}

inline std::string trace_csv(const std::vector<TrainStep>& trace) {
  std::string out = "iter,loss,invariance_loss,data_loss,margin\n";
  for (const auto& s : trace) {
    out += std::to_string(s.iter);
    out += ',';
    out += format_double(s.loss);
    out += ',';
    out += format_double(s.invariance);
    out += ',';
    out += format_double(s.data);
    out += ',';
    out += format_double(s.margin);
    out += '\n';
  }
  return out;
}

inline std::string trajectories_csv(const std::vector<Trajectory>& trajs, const Mat<double>& H,
                                    const IntervalVector<double>& ybox) {
  std::string out = "traj,t";
  for (std::size_t j = 0; j < H.c; ++j) out += ",x" + std::to_string(j);
  for (std::size_t i = 0; i < H.r; ++i) out += ",y" + std::to_string(i);
  out += ",contained\n";
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const Trajectory& traj = trajs[k];
    for (std::size_t s = 0; s < traj.t.size(); ++s) {
      out += std::to_string(k);
      out += ',';
      out += format_double(traj.t[s]);
      const std::vector<double> y = matvec(H, traj.x[s]);
      for (const double v : traj.x[s]) {
        out += ',';
        out += format_double(v);
      }
      for (const double v : y) {
        out += ',';
        out += format_double(v);
      }
      out += box_contains(ybox, y, 1e-9) ? ",1\n" : ",0\n";
    }
  }
  return out;
}

inline std::string polytope_edges_csv(const PolytopeGraph& g, std::size_t dim) {
  std::string out = "edge";
  for (std::size_t j = 0; j < dim; ++j) out += ",x" + std::to_string(j) + "_a";
  for (std::size_t j = 0; j < dim; ++j) out += ",x" + std::to_string(j) + "_b";
  out += '\n';
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    out += std::to_string(e);
    for (const double v : g.vertices[g.edges[e].first]) {
      out += ',';
      out += format_double(v);
    }
    for (const double v : g.vertices[g.edges[e].second]) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace polycert::io
