#include "lingedit/objectives.hpp"

#include "json.hpp"

namespace lingedit {

std::string LossReport::to_json_line() const {
  const nlohmann::json j = {{"step", step},
                            {"epoch", epoch},
                            {"gamma1", gamma1},
                            {"gamma2", gamma2},
                            {"d_total", d_total},
                            {"d_real_uncond", d_real_uncond},
                            {"d_fake_uncond", d_fake_uncond},
                            {"d_real_cond", d_real_cond},
                            {"d_fake_cond", d_fake_cond},
                            {"g_total", g_total},
                            {"g_fake_uncond", g_fake_uncond},
                            {"g_fake_cond", g_fake_cond},
                            {"reconstruction", reconstruction}};
  return j.dump();
}

LossReport LossReport::from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("loss log: ") + e.what());
  }
  LossReport r;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) throw DataError(std::string("loss log: missing ") + key);
    j.at(key).get_to(field);
  };
  get("step", r.step);
  get("epoch", r.epoch);
  get("gamma1", r.gamma1);
  get("gamma2", r.gamma2);
  get("d_total", r.d_total);
  get("d_real_uncond", r.d_real_uncond);
  get("d_fake_uncond", r.d_fake_uncond);
  get("d_real_cond", r.d_real_cond);
  get("d_fake_cond", r.d_fake_cond);
  get("g_total", r.g_total);
  get("g_fake_uncond", r.g_fake_uncond);
  get("g_fake_cond", r.g_fake_cond);
  get("reconstruction", r.reconstruction);
  return r;
}

}  // namespace lingedit
