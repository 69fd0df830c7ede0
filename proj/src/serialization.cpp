#include "cmm/serialization.hpp"

#include <cmath>
#include <fstream>

#include "cmm/error.hpp"

namespace cmm {

namespace json_field {

void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError(path + ": expected an object");
}

void reject_unknown(const Json& j, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ValidationError(path + "." + item.key() + ": unknown field");
  }
}

double number(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ValidationError(path + ": expected a number");
  return j.get<double>();
}

long long integer(const Json& j, const std::string& path) {
  if (j.is_number_integer()) return j.get<long long>();
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (std::floor(v) == v && std::abs(v) < 9e15) return static_cast<long long>(v);
  }
  throw ValidationError(path + ": expected an integer");
}

std::string string(const Json& j, const std::string& path) {
  if (!j.is_string()) throw ValidationError(path + ": expected a string");
  return j.get<std::string>();
}

bool boolean(const Json& j, const std::string& path) {
  if (!j.is_boolean()) throw ValidationError(path + ": expected true or false");
  return j.get<bool>();
}

}  // namespace json_field

namespace {

using namespace json_field;

const Json& at(const Json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw ValidationError(path + "." + key + ": missing");
  return j.at(key);
}

std::vector<double> number_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError(path + ": expected a list of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace

Json to_json(const FeatureMap& fm) {
  Json j;
  switch (fm.kind()) {
    case FeatureKind::kTabular:
      j["kind"] = "tabular";
      j["cardinality"] = fm.cardinality();
      break;
    case FeatureKind::kPolynomial:
      j["kind"] = "polynomial";
      j["degree"] = fm.degree();
      j["input_dim"] = fm.input_dim();
      if (fm.is_standardized()) {
        j["shift"] = fm.shift();
        j["scale"] = fm.scale();
      }
      break;
    case FeatureKind::kRbf:
      j["kind"] = "rbf";
      j["centers"] = fm.centers();
      j["bandwidth"] = fm.bandwidth();
      break;
  }
  return j;
}

FeatureMap feature_map_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  const std::string kind = string(at(j, "kind", path), path + ".kind");
  try {
    if (kind == "tabular") {
      reject_unknown(j, path, {"kind", "cardinality"});
      return FeatureMap::tabular(
          static_cast<int>(integer(at(j, "cardinality", path), path + ".cardinality")));
    }
    if (kind == "polynomial") {
      reject_unknown(j, path, {"kind", "degree", "input_dim", "shift", "scale"});
      const int degree = static_cast<int>(integer(at(j, "degree", path), path + ".degree"));
      const int dim = j.contains("input_dim")
                          ? static_cast<int>(integer(j.at("input_dim"), path + ".input_dim"))
                          : 1;
      FeatureMap fm = FeatureMap::polynomial(degree, dim);
      if (j.contains("shift") || j.contains("scale")) {
        fm = fm.with_standardization(number_list(at(j, "shift", path), path + ".shift"),
                                     number_list(at(j, "scale", path), path + ".scale"));
      }
      return fm;
    }
    if (kind == "rbf") {
      reject_unknown(j, path, {"kind", "centers", "bandwidth"});
      const Json& cj = at(j, "centers", path);
      if (!cj.is_array()) throw ValidationError(path + ".centers: expected a list");
      std::vector<std::vector<double>> centers;
      for (std::size_t i = 0; i < cj.size(); ++i) {
        centers.push_back(number_list(cj[i], path + ".centers[" + std::to_string(i) + "]"));
      }
      return FeatureMap::rbf(std::move(centers),
                             number(at(j, "bandwidth", path), path + ".bandwidth"));
    }
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    if (what.rfind(path, 0) == 0) throw;
    throw ValidationError(path + ": " + what);
  }
  throw ValidationError(path + ".kind: unknown feature kind '" + kind + "'");
}

Json to_json(const ParamFunction& fn) {
  Json j;
  j["features"] = to_json(fn.features);
  j["weights"] = std::vector<double>(fn.weights.data(), fn.weights.data() + fn.weights.size());
  j["radius"] = fn.radius;
  return j;
}

ParamFunction param_function_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"features", "weights", "radius"});
  ParamFunction fn;
  fn.features = feature_map_from_json(at(j, "features", path), path + ".features");
  const auto w = number_list(at(j, "weights", path), path + ".weights");
  if (w.size() != fn.features.output_dim()) {
    throw ValidationError(path + ".weights: length " + std::to_string(w.size()) +
                          " does not match feature dimension " +
                          std::to_string(fn.features.output_dim()));
  }
  fn.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  fn.radius = j.contains("radius") ? number(j.at("radius"), path + ".radius") : kDefaultRadius;
  if (!(fn.radius > 0.0)) throw ValidationError(path + ".radius: must be positive");
  return fn;
}

Json to_json(const TabularMDP& mdp) {
  Json j;
  j["n_states"] = mdp.n_states();
  j["n_actions"] = mdp.n_actions();
  j["gamma"] = mdp.gamma();
  j["transitions"] = mdp.transitions();
  j["rewards"] = mdp.rewards();
  return j;
}

TabularMDP mdp_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"n_states", "n_actions", "gamma", "transitions", "rewards"});
  const double gamma = number(at(j, "gamma", path), path + ".gamma");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError(path + ".gamma: must be in [0, 1)");
  try {
    return TabularMDP(static_cast<int>(integer(at(j, "n_states", path), path + ".n_states")),
                      static_cast<int>(integer(at(j, "n_actions", path), path + ".n_actions")),
                      number_list(at(j, "transitions", path), path + ".transitions"),
                      number_list(at(j, "rewards", path), path + ".rewards"), gamma);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

Json to_json(const GameOptions& opts) {
  Json j;
  j["alpha"] = opts.alpha;
  j["h_regularizer"] = opts.h_regularizer == HRegularizer::kOlsAnchor ? "ols-anchor" : "none";
  if (opts.f_ridge) {
    j["f_ridge"] = *opts.f_ridge;
  } else {
    j["f_ridge"] = "auto";
  }
  return j;
}

GameOptions game_options_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"alpha", "h_regularizer", "f_ridge"});
  GameOptions o;
  if (j.contains("alpha")) o.alpha = number(j.at("alpha"), path + ".alpha");
  if (!(o.alpha >= 0.0)) throw ValidationError(path + ".alpha: must be >= 0");
  if (j.contains("h_regularizer")) {
    const auto r = string(j.at("h_regularizer"), path + ".h_regularizer");
    if (r == "none") {
      o.h_regularizer = HRegularizer::kNone;
    } else if (r == "ols-anchor") {
      o.h_regularizer = HRegularizer::kOlsAnchor;
    } else {
      throw ValidationError(path + ".h_regularizer: expected none or ols-anchor");
    }
  }
  if (j.contains("f_ridge")) {
    const Json& fr = j.at("f_ridge");
    if (fr.is_string() && fr.get<std::string>() == "auto") {
      o.f_ridge.reset();
    } else {
      o.f_ridge = number(fr, path + ".f_ridge");
      if (!(*o.f_ridge >= 0.0)) throw ValidationError(path + ".f_ridge: must be >= 0");
    }
  }
  return o;
}

Json to_json(const ModelArtifact& m) {
  Json j;
  j["h"] = to_json(m.h);
  j["f_class"] = {{"features", to_json(m.f_class.features)}, {"radius", m.f_class.radius}};
  j["game"] = to_json(m.game);
  return j;
}

ModelArtifact model_from_json(const Json& j) {
  require_object(j, "model");
  reject_unknown(j, "model", {"h", "f_class", "game"});
  ModelArtifact m;
  m.h = param_function_from_json(at(j, "h", "model"), "model.h");
  const Json& fc = at(j, "f_class", "model");
  require_object(fc, "model.f_class");
  reject_unknown(fc, "model.f_class", {"features", "radius"});
  m.f_class.features = feature_map_from_json(at(fc, "features", "model.f_class"),
                                             "model.f_class.features");
  if (fc.contains("radius")) m.f_class.radius = number(fc.at("radius"), "model.f_class.radius");
  if (j.contains("game")) m.game = game_options_from_json(j.at("game"), "model.game");
  return m;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace cmm
