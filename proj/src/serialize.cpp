#include "scb/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scb/error.hpp"

namespace scb {

using nlohmann::json;

std::string ground_truth_to_json(const GroundTruth& gt,
                                 const std::string& role) {
  json doc;
  doc["version"] = 1;
  doc["T"] = gt.dims().T;
  doc["N"] = gt.dims().N;
  doc["Q"] = gt.dims().Q;
  doc["C"] = gt.dims().C;
  if (!role.empty()) doc["role"] = role;

  json P = json::array();
  for (int k = 0; k < gt.dims().N; ++k) {
    json col = json::array();
    for (int n = 0; n < gt.dims().N; ++n) col.push_back(gt.P()(n, k));
    P.push_back(col);
  }
  doc["P"] = P;

  json mu = json::array();
  for (int k = 0; k < gt.dims().N; ++k) mu.push_back(gt.mu()[k]);
  doc["mu"] = mu;

  json qs = json::array();
  for (int k = 0; k < gt.dims().N; ++k) {
    json col = json::array();
    for (int t : gt.support(k)) col.push_back(json::array({t, gt.Qmat()(t, k)}));
    qs.push_back(col);
  }
  doc["Qmat_sparse"] = qs;
  return doc.dump(2) + "\n";
}

GroundTruth ground_truth_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("ground truth JSON: ") + e.what());
  }
  if (!doc.contains("version") || doc["version"].get<int>() != 1)
    throw ValidationError("ground truth JSON: unsupported version");
  Dims dims;
  dims.T = doc.at("T").get<int>();
  dims.N = doc.at("N").get<int>();
  dims.Q = doc.at("Q").get<int>();
  dims.C = doc.at("C").get<double>();

  Eigen::MatrixXd P(dims.N, dims.N);
  const auto& pj = doc.at("P");
  if (static_cast<int>(pj.size()) != dims.N)
    throw ValidationError("ground truth JSON: P has wrong column count");
  for (int k = 0; k < dims.N; ++k)
    for (int n = 0; n < dims.N; ++n) P(n, k) = pj[k][n].get<double>();

  Eigen::VectorXd mu(dims.N);
  for (int k = 0; k < dims.N; ++k) mu[k] = doc.at("mu")[k].get<double>();

  Eigen::MatrixXd Qmat = Eigen::MatrixXd::Zero(dims.T, dims.N);
  const auto& qj = doc.at("Qmat_sparse");
  if (static_cast<int>(qj.size()) != dims.N)
    throw ValidationError("ground truth JSON: Qmat_sparse has wrong size");
  for (int k = 0; k < dims.N; ++k)
    for (const auto& pair : qj[k]) {
      const int t = pair[0].get<int>();
      if (t < 0 || t >= dims.T)
        throw ValidationError("ground truth JSON: Qmat index out of range");
      Qmat(t, k) = pair[1].get<double>();
    }
  // Validation (including after deserialization) happens in the constructor.
  return GroundTruth(dims, std::move(P), std::move(mu), std::move(Qmat));
}

std::string model_params_to_json(const ModelParams& params) {
  json doc;
  doc["version"] = 1;
  json V = json::array();
  for (Eigen::Index k = 0; k < params.V.cols(); ++k) {
    json col = json::array();
    for (Eigen::Index n = 0; n < params.V.rows(); ++n)
      col.push_back(params.V(n, k));
    V.push_back(col);
  }
  doc["V"] = V;
  json A = json::array();
  for (Eigen::Index k = 0; k < params.A.cols(); ++k) {
    json col = json::array();
    for (Eigen::Index t = 0; t < params.A.rows(); ++t)
      col.push_back(params.A(t, k));
    A.push_back(col);
  }
  doc["A"] = A;
  return doc.dump() + "\n";
}

ModelParams model_params_from_json(const std::string& text) {
  json doc = json::parse(text);
  const auto& vj = doc.at("V");
  const auto& aj = doc.at("A");
  const int N = static_cast<int>(vj.size());
  const int T = N > 0 ? static_cast<int>(aj[0].size()) : 0;
  ModelParams p;
  p.V.resize(N, N);
  for (int k = 0; k < N; ++k)
    for (int n = 0; n < N; ++n) p.V(n, k) = vj[k][n].get<double>();
  p.A.resize(T, N);
  for (int k = 0; k < N; ++k)
    for (int t = 0; t < T; ++t) p.A(t, k) = aj[k][t].get<double>();
  return p;
}

std::string samples_to_jsonl(const std::vector<Sample>& samples) {
  std::string out;
  for (const Sample& s : samples) {
    json line;
    line["x"] = s.x;
    line["k"] = s.x_last;
    line["o"] = s.x_out;
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::vector<Sample> samples_from_jsonl(const std::string& text) {
  std::vector<Sample> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json doc = json::parse(line);
    Sample s;
    s.x = doc.at("x").get<std::vector<std::int32_t>>();
    s.x_last = doc.at("k").get<std::int32_t>();
    s.x_out = doc.at("o").get<std::int32_t>();
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

std::string trajectory_to_csv(const std::vector<TrajectoryRow>& rows) {
  std::string out =
      "step,stage,loss_est,alpha_V,alpha_A,delta_V_mu,delta_A_mu,dist_V_mu,"
      "dist_A_mu,off_support_max\n";
  for (const TrajectoryRow& r : rows) {
    out += std::to_string(r.step);
    out += ',';
    out += std::to_string(r.stage);
    for (double v : {r.loss_est, r.alpha_V, r.alpha_A, r.delta_V_mu,
                     r.delta_A_mu, r.dist_V_mu, r.dist_A_mu,
                     r.off_support_max}) {
      out += ',';
      append_double(out, v);
    }
    out += '\n';
  }
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for writing: " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw Error("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for reading: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace scb
