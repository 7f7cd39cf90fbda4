#pragma once

#include "json.hpp"

#include "modrestore/condition.hpp"
#include "modrestore/degradation.hpp"
#include "modrestore/discriminator.hpp"
#include "modrestore/generator.hpp"
#include "modrestore/modulation.hpp"

namespace modrestore {

using Json = nlohmann::json;

void to_json(Json& j, const GeneratorConfig& c);
void from_json(const Json& j, GeneratorConfig& c);
void to_json(Json& j, const ConvStage& s);
void from_json(const Json& j, ConvStage& s);
void to_json(Json& j, const DiscriminatorConfig& c);
void from_json(const Json& j, DiscriminatorConfig& c);
void to_json(Json& j, const DegradationSpec& s);
void from_json(const Json& j, DegradationSpec& s);
void to_json(Json& j, const ModulationSite& s);
void from_json(const Json& j, ModulationSite& s);
void to_json(Json& j, const ConditionVector& z);
void from_json(const Json& j, ConditionVector& z);

}  // namespace modrestore
