#include "hcb/metrics.hpp"

#include <fstream>

#include "hcb/train.hpp"

namespace hcb {

using nlohmann::json;

EvalPartitions build_eval_partitions(const Dataset& test, const TriggerSpec& trig,
                                     int y_t, PoisonMode mode,
                                     const std::vector<int>& source_classes) {
  test.validate();
  if (y_t < 0 || y_t >= test.num_classes) {
    throw ValidationError("target label outside class range");
  }
  TriggerSpec eval_trig = trig;
  eval_trig.opacity = 1.0;  // attacks are launched with the opaque trigger
  eval_trig.check_fits(test.height, test.width);

  std::vector<bool> in_source(test.num_classes, false);
  for (int s : source_classes) {
    if (s < 0 || s >= test.num_classes)
      throw ValidationError("source class outside class range");
    in_source[s] = true;
  }
  const bool source_specific = mode == PoisonMode::HCB_SOURCE_SPECIFIC;

  EvalPartitions parts;
  parts.y_t = y_t;
  parts.mode = mode;
  parts.source_classes = source_classes;
  parts.num_classes = test.num_classes;
  parts.height = test.height;
  parts.width = test.width;
  parts.channels = test.channels;

  size_t effective_total = 0;
  for (const Example& e : test.examples) {
    parts.benign.push_back(e);
    if (e.innocuous) ++effective_total;
    if (e.label == y_t) continue;  // kept out of every attack-rate denominator
    if (e.innocuous) {
      parts.es_plain.push_back(e);
      Example triggered = e;
      apply_trigger_inplace(triggered.image, eval_trig);
      if (!source_specific || in_source[e.label]) {
        parts.es_trig.push_back(triggered);
      }
      if (source_specific && !in_source[e.label]) {
        parts.ns_es_trig.push_back(std::move(triggered));
      }
    } else {
      Example triggered = e;
      apply_trigger_inplace(triggered.image, eval_trig);
      parts.nes_trig.push_back(std::move(triggered));
    }
  }
  if (effective_total == 0) {
    throw ValidationError(
        "test set has no effective samples; increase the innocuous prevalence");
  }
  return parts;
}

EvalReport evaluate_attack(nn::Network<float>& net, const EvalPartitions& parts) {
  if (net.input_dim() != parts.height * parts.width * parts.channels ||
      net.num_classes() != parts.num_classes) {
    throw ValidationError("model and partitions disagree on input shape or classes");
  }
  EvalReport r;
  r.y_t = parts.y_t;

  auto count_hits = [&](const std::vector<Example>& pop, bool match_label) {
    MetricCount m;
    m.den = static_cast<int64_t>(pop.size());
    if (pop.empty()) return m;
    std::vector<int> preds = predict_examples(net, pop);
    for (size_t i = 0; i < pop.size(); ++i) {
      const int want = match_label ? pop[i].label : parts.y_t;
      if (preds[i] == want) ++m.num;
    }
    return m;
  };

  r.cda = count_hits(parts.benign, /*match_label=*/true);
  r.asr = count_hits(parts.es_trig, /*match_label=*/false);
  r.fpr_es = count_hits(parts.es_plain, /*match_label=*/false);
  r.fpr_nes = count_hits(parts.nes_trig, /*match_label=*/false);
  if (!parts.ns_es_trig.empty()) {
    r.fpr_ns_es = count_hits(parts.ns_es_trig, /*match_label=*/false);
  }
  return r;
}

EvalReport evaluate_attack(const Checkpoint& ck, const EvalPartitions& parts) {
  nn::Network<float> net = to_network(ck);
  EvalReport r = evaluate_attack(net, parts);
  r.config_digest = ck.meta.config_digest;
  return r;
}

EvalReport metrics_oracle(const std::vector<int>& predictions,
                          const EvalPartitions& parts) {
  const size_t expected = parts.benign.size() + parts.es_trig.size() +
                          parts.es_plain.size() + parts.nes_trig.size() +
                          parts.ns_es_trig.size();
  if (predictions.size() != expected) {
    throw ValidationError("prediction list length " +
                          std::to_string(predictions.size()) +
                          " does not match partition total " +
                          std::to_string(expected));
  }

  EvalReport r;
  r.y_t = parts.y_t;
  size_t at = 0;

  for (size_t i = 0; i < parts.benign.size(); ++i, ++at) {
    r.cda.den += 1;
    if (predictions[at] == parts.benign[i].label) r.cda.num += 1;
  }
  for (size_t i = 0; i < parts.es_trig.size(); ++i, ++at) {
    r.asr.den += 1;
    if (predictions[at] == parts.y_t) r.asr.num += 1;
  }
  for (size_t i = 0; i < parts.es_plain.size(); ++i, ++at) {
    r.fpr_es.den += 1;
    if (predictions[at] == parts.y_t) r.fpr_es.num += 1;
  }
  for (size_t i = 0; i < parts.nes_trig.size(); ++i, ++at) {
    r.fpr_nes.den += 1;
    if (predictions[at] == parts.y_t) r.fpr_nes.num += 1;
  }
  if (!parts.ns_es_trig.empty()) {
    MetricCount m;
    for (size_t i = 0; i < parts.ns_es_trig.size(); ++i, ++at) {
      m.den += 1;
      if (predictions[at] == parts.y_t) m.num += 1;
    }
    r.fpr_ns_es = m;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json count_to_json(const MetricCount& m) {
  return json{{"num", m.num}, {"den", m.den}, {"rate", m.rate()}};
}

MetricCount count_from_json(const json& j) {
  MetricCount m;
  m.num = j.at("num").get<int64_t>();
  m.den = j.at("den").get<int64_t>();
  return m;
}

}  // namespace

json EvalReport::to_json() const {
  json j;
  j["cda"] = count_to_json(cda);
  j["asr"] = count_to_json(asr);
  j["fpr_es"] = count_to_json(fpr_es);
  j["fpr_nes"] = count_to_json(fpr_nes);
  if (fpr_ns_es) j["fpr_ns_es"] = count_to_json(*fpr_ns_es);
  j["y_t"] = y_t;
  j["config_digest"] = config_digest;
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.cda = count_from_json(j.at("cda"));
  r.asr = count_from_json(j.at("asr"));
  r.fpr_es = count_from_json(j.at("fpr_es"));
  r.fpr_nes = count_from_json(j.at("fpr_nes"));
  if (j.contains("fpr_ns_es")) r.fpr_ns_es = count_from_json(j.at("fpr_ns_es"));
  r.y_t = j.at("y_t").get<int>();
  r.config_digest = j.value("config_digest", "");
  return r;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << report.to_json().dump(2) << "\n";
}

EvalReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  json j;
  in >> j;
  return EvalReport::from_json(j);
}

void append_report_csv(const EvalReport& report, const std::string& run_label,
                       const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot write " + path.string());
  if (fresh) out << "run,y_t,cda,asr,fpr_es,fpr_nes,fpr_ns_es\n";
  out << run_label << "," << report.y_t << "," << report.cda.rate() << ","
      << report.asr.rate() << "," << report.fpr_es.rate() << ","
      << report.fpr_nes.rate() << ",";
  if (report.fpr_ns_es) out << report.fpr_ns_es->rate();
  out << "\n";
}

}  // namespace hcb
