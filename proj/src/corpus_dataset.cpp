#include "finprompt/corpus.hpp"

#include "finprompt/error.hpp"
#include "finprompt/util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace finprompt::corpus {

using nlohmann::json;

std::string_view to_string(Subset subset) {
    switch (subset) {
        case Subset::SimpShort: return "SimpShort";
        case Subset::CompShort: return "CompShort";
        case Subset::SimpLong: return "SimpLong";
        case Subset::CompLong: return "CompLong";
    }
    return "SimpShort";
}

std::optional<Subset> subset_from_string(std::string_view name) {
    const std::string n = to_lower(name);
    if (n == "simpshort") return Subset::SimpShort;
    if (n == "compshort") return Subset::CompShort;
    if (n == "simplong") return Subset::SimpLong;
    if (n == "complong") return Subset::CompLong;
    return std::nullopt;
}

std::string_view to_string(Origin origin) { return origin == Origin::real ? "real" : "synthetic"; }

void Example::validate() const {
    if (trim(passage).empty()) throw SchemaError("example '" + id + "': empty passage");
    if (trim(question).empty()) throw SchemaError("example '" + id + "': empty question");
    if (!std::isfinite(gold_answer)) throw SchemaError("example '" + id + "': gold answer is not finite");
    if (origin == Origin::synthetic && !difficulty)
        throw SchemaError("example '" + id + "': synthetic example without difficulty");
    if (difficulty && *difficulty < 1) throw SchemaError("example '" + id + "': difficulty must be >= 1");
}

void to_json(json& j, const Example& e) {
    j = json{{"id", e.id},
             {"paragraphs", json::array({e.passage})},
             {"question", e.question},
             {"ground_truth", e.gold_answer},
             {"origin", std::string(to_string(e.origin))}};
    if (e.difficulty) j["difficulty"] = *e.difficulty;
    if (e.subset) j["subset"] = std::string(to_string(*e.subset));
}

void from_json(const json& j, Example& e) {
    if (!j.is_object()) throw SchemaError("record is not a JSON object");

    if (j.contains("id") && !j["id"].is_null()) {
        e.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else if (j.contains("question_id") && !j["question_id"].is_null()) {
        e.id = j["question_id"].is_string() ? j["question_id"].get<std::string>() : j["question_id"].dump();
    }

    const json* paragraphs = nullptr;
    if (j.contains("paragraphs")) paragraphs = &j["paragraphs"];
    else if (j.contains("passage")) paragraphs = &j["passage"];
    if (!paragraphs) throw SchemaError("missing field 'paragraphs'");
    std::vector<std::string> parts;
    if (paragraphs->is_string()) {
        parts.push_back(paragraphs->get<std::string>());
    } else if (paragraphs->is_array()) {
        for (const auto& p : *paragraphs) {
            if (!p.is_string()) throw SchemaError("'paragraphs' entries must be strings");
            parts.push_back(p.get<std::string>());
        }
    } else {
        throw SchemaError("'paragraphs' must be a string or a list of strings");
    }
    if (j.contains("tables") && j["tables"].is_array()) {
        for (const auto& t : j["tables"]) {
            if (t.is_string()) parts.push_back(t.get<std::string>());
        }
    }
    e.passage = join(parts, "\n");

    if (!j.contains("question") || !j["question"].is_string()) throw SchemaError("missing field 'question'");
    e.question = j["question"].get<std::string>();

    if (!j.contains("ground_truth")) throw SchemaError("missing field 'ground_truth'");
    const auto& gt = j["ground_truth"];
    if (gt.is_number()) {
        e.gold_answer = gt.get<double>();
    } else if (gt.is_string()) {
        auto v = parse_number(gt.get<std::string>());
        if (!v) throw SchemaError("non-numeric gold answer '" + gt.get<std::string>() + "'");
        e.gold_answer = *v;
    } else {
        throw SchemaError("non-numeric gold answer");
    }

    e.origin = Origin::real;
    if (j.contains("origin")) {
        const auto o = j["origin"].get<std::string>();
        if (o == "synthetic") e.origin = Origin::synthetic;
        else if (o != "real") throw SchemaError("unknown origin '" + o + "'");
    }
    e.difficulty.reset();
    if (j.contains("difficulty") && !j["difficulty"].is_null()) {
        if (!j["difficulty"].is_number_integer()) throw SchemaError("'difficulty' must be an integer");
        e.difficulty = j["difficulty"].get<int>();
    }
    e.subset.reset();
    if (j.contains("subset") && !j["subset"].is_null()) {
        const auto s = j["subset"].get<std::string>();
        e.subset = subset_from_string(s);
        if (!e.subset) throw SchemaError("unknown subset '" + s + "'");
    }
}

LoadReport load_dataset_report(const std::string& path, const LoadOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset " + path);

    LoadReport report;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        Example e;
        try {
            json doc;
            try {
                doc = json::parse(line);
            } catch (const json::exception& ex) {
                throw SchemaError(std::string("malformed JSON: ") + ex.what());
            }
            try {
                e = doc.get<Example>();
            } catch (const json::exception& ex) {
                throw SchemaError(std::string("bad field type: ") + ex.what());
            }
            if (e.id.empty()) e.id = "line-" + std::to_string(line_no);
            if (!e.subset) e.subset = options.default_subset;
            e.validate();
        } catch (const SchemaError& err) {
            const std::string where = path + " line " + std::to_string(line_no) + ": " + err.what();
            if (options.strict) throw SchemaError(where);
            report.skipped.push_back(where);
            log_warn("skipping record, " + where);
            continue;
        }
        if (options.subset_filter && e.subset != options.subset_filter) continue;
        report.examples.push_back(std::move(e));
    }
    return report;
}

std::vector<Example> load_dataset(const std::string& path, const LoadOptions& options) {
    return load_dataset_report(path, options).examples;
}

void save_dataset(const std::string& path, std::span<const Example> examples) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write dataset " + path);
    for (const auto& e : examples) out << json(e).dump() << '\n';
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------

const std::vector<Bucket>& default_buckets() {
    static const std::vector<Bucket> buckets = [] {
        const double inf = std::numeric_limits<double>::infinity();
        return std::vector<Bucket>{{-inf, 0.0, "(-inf,0)"},       {0.0, 1.0, "[0,1)"},
                                   {1.0, 10.0, "[1,10)"},         {10.0, 100.0, "[10,100)"},
                                   {100.0, 1000.0, "[100,1000)"}, {1000.0, 1e6, "[1000,1e6)"},
                                   {1e6, inf, "[1e6,inf)"}};
    }();
    return buckets;
}

std::size_t bucket_index(double value, std::span<const Bucket> buckets) {
    for (std::size_t i = 0; i < buckets.size(); ++i)
        if (buckets[i].contains(value)) return i;
    return buckets.size() - 1;  // +inf lands in the top bucket
}

void to_json(json& j, const LabelPrior& p) {
    json names = json::array();
    for (const auto& b : p.buckets) names.push_back(b.name);
    j = json{{"buckets", names}, {"probabilities", p.probabilities}, {"sample_count", p.sample_count}};
}

void from_json(const json& j, LabelPrior& p) {
    p.buckets.clear();
    const auto& defaults = default_buckets();
    for (const auto& n : j.at("buckets")) {
        const auto name = n.get<std::string>();
        auto it = std::find_if(defaults.begin(), defaults.end(), [&](const Bucket& b) { return b.name == name; });
        if (it == defaults.end()) throw SchemaError("unknown label bucket '" + name + "'");
        p.buckets.push_back(*it);
    }
    p.probabilities = j.at("probabilities").get<std::vector<double>>();
    p.sample_count = j.at("sample_count").get<std::size_t>();
    if (p.probabilities.size() != p.buckets.size()) throw SchemaError("label prior arity mismatch");
}

LabelPrior label_distribution(std::span<const double> answers) {
    if (answers.empty()) throw EmptyCorpus("label prior needs at least one answer");
    LabelPrior prior;
    prior.buckets = default_buckets();
    std::vector<std::size_t> counts(prior.buckets.size(), 0);
    for (double a : answers) ++counts[bucket_index(a, prior.buckets)];
    const double denom = static_cast<double>(answers.size() + prior.buckets.size());
    for (std::size_t c : counts) prior.probabilities.push_back((static_cast<double>(c) + 1.0) / denom);
    prior.sample_count = answers.size();
    return prior;
}

LabelPrior estimate_label_prior(std::span<const Example> examples) {
    if (examples.empty()) throw EmptyCorpus("cannot estimate a label prior from an empty corpus");
    std::vector<double> answers;
    answers.reserve(examples.size());
    for (const auto& e : examples) answers.push_back(e.gold_answer);
    return label_distribution(answers);
}

} // namespace finprompt::corpus
