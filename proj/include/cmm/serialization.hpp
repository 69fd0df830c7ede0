#pragma once

#include <filesystem>
#include <json.hpp>

#include "cmm/bellman.hpp"
#include "cmm/function_classes.hpp"
#include "cmm/rela_game.hpp"

namespace cmm {

using Json = nlohmann::ordered_json;

// Structured text for the model types. Every reader rejects unknown keys and
// reports the offending field path.
Json to_json(const FeatureMap& fm);
FeatureMap feature_map_from_json(const Json& j, const std::string& path = "features");

Json to_json(const ParamFunction& fn);
ParamFunction param_function_from_json(const Json& j, const std::string& path = "function");

Json to_json(const TabularMDP& mdp);
TabularMDP mdp_from_json(const Json& j, const std::string& path = "mdp");

Json to_json(const GameOptions& opts);
GameOptions game_options_from_json(const Json& j, const std::string& path = "game");

// Trained h plus what is needed to rebuild its game on new data.
struct ModelArtifact {
  ParamFunction h;
  FunctionClass f_class;
  GameOptions game;
};
Json to_json(const ModelArtifact& m);
ModelArtifact model_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

// Field helpers shared with the config reader.
namespace json_field {
void require_object(const Json& j, const std::string& path);
void reject_unknown(const Json& j, const std::string& path,
                    std::initializer_list<const char*> allowed);
double number(const Json& j, const std::string& path);
long long integer(const Json& j, const std::string& path);
std::string string(const Json& j, const std::string& path);
bool boolean(const Json& j, const std::string& path);
}  // namespace json_field

}  // namespace cmm
