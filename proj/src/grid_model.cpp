#include "nodalprice/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace nodal::grid {

using nlohmann::json;

Eigen::VectorXd Network::injections_p() const {
  Eigen::VectorXd p(n());
  for (int i = 0; i < n(); ++i) p[i] = buses[i].p_gen - buses[i].p_load;
  return p;
}

Eigen::VectorXd Network::injections_q() const {
  Eigen::VectorXd q(n());
  for (int i = 0; i < n(); ++i) q[i] = buses[i].q_gen - buses[i].q_load;
  return q;
}

namespace {

double get_num(const json& j, const char* key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number())
    throw MalformedFile("field '" + std::string(key) + "' of " + where + " is not a number");
  return j[key].get<double>();
}

Network parse_case_json(const json& doc, const std::string& origin) {
  if (!doc.is_object()) throw MalformedFile(origin + ": top level is not an object");
  Network net;
  net.base_mva = get_num(doc, "base_mva", 100.0, origin);
  if (!(net.base_mva > 0)) throw MalformedFile(origin + ": base_mva must be positive");
  if (!doc.contains("buses") || !doc["buses"].is_array())
    throw MalformedFile(origin + ": missing 'buses' array");
  if (!doc.contains("lines") || !doc["lines"].is_array())
    throw MalformedFile(origin + ": missing 'lines' array");

  std::set<int> seen_ids;
  int slack_count = 0;
  for (const auto& jb : doc["buses"]) {
    Bus b;
    if (!jb.contains("id") || !jb["id"].is_number_integer())
      throw MalformedFile(origin + ": bus without integer 'id'");
    b.id = jb["id"].get<int>();
    const std::string where = "bus " + std::to_string(b.id);
    if (!seen_ids.insert(b.id).second) throw DuplicateBusId("duplicate bus id " + std::to_string(b.id));
    std::string kind = jb.value("kind", std::string("pq"));
    std::transform(kind.begin(), kind.end(), kind.begin(), ::tolower);
    if (kind == "slack") {
      b.kind = BusKind::Slack;
      ++slack_count;
      if (slack_count > 1) throw DuplicateSlack("second slack bus at " + where);
      net.slack = static_cast<int>(net.buses.size());
    } else if (kind == "pq") {
      b.kind = BusKind::PQ;
    } else {
      throw MalformedFile(where + ": unknown kind '" + kind + "'");
    }
    b.p_load = get_num(jb, "p_load", 0.0, where) / net.base_mva;
    b.q_load = get_num(jb, "q_load", 0.0, where) / net.base_mva;
    b.p_gen = get_num(jb, "p_gen", 0.0, where) / net.base_mva;
    b.q_gen = get_num(jb, "q_gen", 0.0, where) / net.base_mva;
    b.v_nom = get_num(jb, "v_nom", 1.0, where);
    b.theta_nom = get_num(jb, "theta_nom", 0.0, where);
    if (!(b.v_nom > 0)) throw MalformedFile(where + ": v_nom must be positive");
    net.buses.push_back(b);
  }
  if (net.buses.empty()) throw MalformedFile(origin + ": no buses");
  if (slack_count == 0) throw MissingSlack(origin + ": no slack bus declared");

  for (const auto& jl : doc["lines"]) {
    Line l;
    if (!jl.contains("from") || !jl.contains("to"))
      throw MalformedFile(origin + ": line without 'from'/'to'");
    l.from = jl["from"].get<int>();
    l.to = jl["to"].get<int>();
    const std::string where = "line " + std::to_string(l.from) + "-" + std::to_string(l.to);
    if (l.from == l.to) throw MalformedFile(where + ": self-loop");
    if (net.index_of(l.from) < 0)
      throw DanglingLineEndpoint(where + ": endpoint " + std::to_string(l.from) + " is not a bus");
    if (net.index_of(l.to) < 0)
      throw DanglingLineEndpoint(where + ": endpoint " + std::to_string(l.to) + " is not a bus");
    l.g = get_num(jl, "g", 0.0, where);
    l.b = get_num(jl, "b", 0.0, where);
    l.b_shunt = get_num(jl, "b_shunt", 0.0, where);
    if (!std::isfinite(l.g) || !std::isfinite(l.b) || !std::isfinite(l.b_shunt))
      throw MalformedFile(where + ": non-finite admittance");
    net.lines.push_back(l);
  }
  return net;
}

}  // namespace

Network parse_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedFile("cannot open case file '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw MalformedFile("case file '" + path + "': " + e.what());
  }
  return parse_case_json(doc, path);
}

Network parse_case_text(const std::string& json_text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw MalformedFile(origin + ": " + e.what());
  }
  return parse_case_json(doc, origin);
}

std::string serialize_case(const Network& net) {
  json doc;
  doc["base_mva"] = net.base_mva;
  doc["buses"] = json::array();
  for (const auto& b : net.buses) {
    json jb;
    jb["id"] = b.id;
    jb["kind"] = (b.kind == BusKind::Slack) ? "slack" : "pq";
    jb["p_load"] = b.p_load * net.base_mva;
    jb["q_load"] = b.q_load * net.base_mva;
    jb["p_gen"] = b.p_gen * net.base_mva;
    jb["q_gen"] = b.q_gen * net.base_mva;
    jb["v_nom"] = b.v_nom;
    jb["theta_nom"] = b.theta_nom;
    doc["buses"].push_back(jb);
  }
  doc["lines"] = json::array();
  for (const auto& l : net.lines) {
    json jl;
    jl["from"] = l.from;
    jl["to"] = l.to;
    jl["g"] = l.g;
    jl["b"] = l.b;
    if (l.b_shunt != 0.0) jl["b_shunt"] = l.b_shunt;
    doc["lines"].push_back(jl);
  }
  return doc.dump(2);
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_admittance(const Network& net) {
  const int n = net.n();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, n);
  for (const auto& l : net.lines) {
    const int i = net.index_of(l.from);
    const int k = net.index_of(l.to);
    G(i, i) += l.g;
    G(k, k) += l.g;
    G(i, k) -= l.g;
    G(k, i) -= l.g;
    B(i, i) += l.b;
    B(k, k) += l.b;
    B(i, k) -= l.b;
    B(k, i) -= l.b;
    B(i, i) += 0.5 * l.b_shunt;
    B(k, k) += 0.5 * l.b_shunt;
  }
  return {G, B};
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

std::vector<LoadForecast> parse_profiles(const std::string& path, int T,
                                         const std::vector<int>& expected_ids) {
  std::ifstream in(path);
  if (!in) throw MalformedFile("cannot open profile file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw MalformedFile("profile file '" + path + "' is empty");
  // Header: station_id,t0,...,t{T-1}. Only the shape is enforced.
  {
    std::stringstream ss(line);
    std::string cell;
    int cols = 0;
    while (std::getline(ss, cell, ',')) ++cols;
    if (cols != T + 1)
      throw RaggedRow("header of '" + path + "' has " + std::to_string(cols) +
                      " columns, expected " + std::to_string(T + 1));
  }
  std::vector<LoadForecast> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != T + 1)
      throw RaggedRow("row " + std::to_string(row) + " of '" + path + "' has " +
                      std::to_string(cells.size()) + " columns, expected " + std::to_string(T + 1));
    LoadForecast f;
    try {
      f.station_id = std::stoi(cells[0]);
    } catch (const std::exception&) {
      throw MalformedFile("row " + std::to_string(row) + ": station_id '" + cells[0] +
                          "' is not an integer");
    }
    if (!expected_ids.empty() &&
        std::find(expected_ids.begin(), expected_ids.end(), f.station_id) == expected_ids.end())
      throw UnknownStation("row " + std::to_string(row) + ": station " +
                           std::to_string(f.station_id) + " is not configured");
    f.p_mw.resize(T);
    for (int t = 0; t < T; ++t) {
      double v;
      try {
        v = std::stod(cells[t + 1]);
      } catch (const std::exception&) {
        throw MalformedFile("row " + std::to_string(row) + ", column " + std::to_string(t + 1) +
                            ": '" + cells[t + 1] + "' is not a number");
      }
      if (v < 0)
        throw NegativeLoad("row " + std::to_string(row) + " (station " +
                           std::to_string(f.station_id) + "), t=" + std::to_string(t) +
                           ": negative load");
      f.p_mw[t] = v;
    }
    out.push_back(std::move(f));
  }
  return out;
}

void write_profiles(const std::string& path, const std::vector<LoadForecast>& profiles) {
  std::ofstream out(path);
  if (!out) throw MalformedFile("cannot write profile file '" + path + "'");
  const int T = profiles.empty() ? 0 : static_cast<int>(profiles.front().p_mw.size());
  out << "station_id";
  for (int t = 0; t < T; ++t) out << ",t" << t;
  out << "\n";
  char buf[64];
  for (const auto& f : profiles) {
    out << f.station_id;
    for (int t = 0; t < T; ++t) {
      std::snprintf(buf, sizeof(buf), "%.17g", f.p_mw[t]);
      out << ',' << buf;
    }
    out << "\n";
  }
}

std::vector<LoadForecast> synth_profiles(std::uint64_t seed,
                                         const std::vector<StationConfig>& stations,
                                         const std::vector<double>& peak_mw, int T) {
  if (peak_mw.size() != stations.size() && peak_mw.size() != 1)
    throw MalformedFile("peak_mw must have one entry or one per station");
  std::vector<LoadForecast> out;
  out.reserve(stations.size());
  for (std::size_t k = 0; k < stations.size(); ++k) {
    const double peak = peak_mw.size() == 1 ? peak_mw[0] : peak_mw[k];
    if (peak < 0) throw NegativeLoad("peak_mw for station " + std::to_string(stations[k].station_id));
    SplitMix64 rng(substream(seed, static_cast<std::uint64_t>(k)));
    LoadForecast f;
    f.station_id = stations[k].station_id;
    f.p_mw = Eigen::VectorXd::Zero(T);
    // Charging sessions arrive as Gaussian bumps; widths are a sizeable
    // fraction of the horizon so the aggregate curve is smooth at 15-minute
    // resolution.
    const int n_bumps = 3 + static_cast<int>(rng.below(4));
    for (int j = 0; j < n_bumps; ++j) {
      const double center = rng.uniform(0.0, static_cast<double>(T));
      const double sigma = rng.uniform(0.08, 0.18) * static_cast<double>(T);
      const double amp = rng.uniform(0.3, 1.0);
      for (int t = 0; t < T; ++t) {
        const double z = (static_cast<double>(t) - center) / sigma;
        f.p_mw[t] += amp * std::exp(-0.5 * z * z);
      }
    }
    f.p_mw = f.p_mw.cwiseMax(0.0);
    Eigen::Index argmax;
    const double maxval = f.p_mw.maxCoeff(&argmax);
    if (peak == 0.0 || maxval <= 0.0) {
      f.p_mw.setZero();
    } else {
      f.p_mw *= peak / maxval;
      f.p_mw[argmax] = peak;  // exact by construction
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace nodal::grid
