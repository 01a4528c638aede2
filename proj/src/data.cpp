#include "sibre/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sibre/errors.hpp"

namespace sibre::data {

namespace {

using nlohmann::json;

// Ceil with a small slack so that exact integer products like 0.2 * 10 do
// not round up through binary representation error.
int budget_ceil(double x) { return static_cast<int>(std::ceil(x - 1e-9)); }

} // namespace

std::size_t Document::num_tokens() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
}

bool operator==(const Document& a, const Document& b) {
    return a.id == b.id && a.sentences == b.sentences && a.query == b.query &&
           a.label_name == b.label_name && a.label_value == b.label_value &&
           a.regression == b.regression && a.gold_mask == b.gold_mask &&
           a.gold_token_mask == b.gold_token_mask;
}

Vocab::Vocab() {
    add("<pad>");
    add("<unk>");
}

std::int64_t Vocab::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const std::int64_t id = static_cast<std::int64_t>(tokens_.size());
    tokens_.push_back(token);
    index_[token] = id;
    return id;
}

std::int64_t Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

Vocab Vocab::build(const std::vector<Document>& train_docs) {
    std::set<std::string> seen;
    for (const auto& doc : train_docs) {
        for (const auto& sent : doc.sentences)
            for (const auto& tok : sent) seen.insert(tok);
        if (doc.query)
            for (const auto& tok : *doc.query) seen.insert(tok);
    }
    Vocab v;
    for (const auto& tok : seen) v.add(tok);
    return v;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write vocab file " + path);
    for (const auto& tok : tokens_) out << tok << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read vocab file " + path);
    Vocab v;
    v.tokens_.clear();
    v.index_.clear();
    std::string line;
    while (std::getline(in, line)) v.add(line);
    if (v.size() < 2 || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<unk>")
        fail(ErrorCode::data, "vocab file " + path + " must start with <pad> and <unk>");
    return v;
}

LabelMap LabelMap::build(const std::vector<Document>& train_docs) {
    std::set<std::string> names;
    for (const auto& doc : train_docs)
        if (!doc.regression) names.insert(doc.label_name);
    LabelMap m;
    for (const auto& n : names) {
        m.index_[n] = static_cast<int>(m.names_.size());
        m.names_.push_back(n);
    }
    return m;
}

int LabelMap::id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::data, "unknown label '" + name + "'");
    return it->second;
}

void LabelMap::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write label file " + path);
    for (const auto& n : names_) out << n << "\n";
}

LabelMap LabelMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read label file " + path);
    LabelMap m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        m.index_[line] = static_cast<int>(m.names_.size());
        m.names_.push_back(line);
    }
    return m;
}

void SynthSpec::validate() const {
    if (n_sentences < 1) fail(ErrorCode::config, "n_sentences must be >= 1");
    if (sentence_len < 1) fail(ErrorCode::config, "sentence_len must be >= 1");
    if (!(signal_fraction > 0.0 && signal_fraction < 1.0))
        fail(ErrorCode::config, "signal_fraction must lie in (0,1)");
    if (!(distractor_rate >= 0.0 && distractor_rate < 1.0))
        fail(ErrorCode::config, "distractor_rate must lie in [0,1)");
    if (num_classes < 2) fail(ErrorCode::config, "num_classes must be >= 2");
    if (num_train < 1 || num_val < 1 || num_test < 1)
        fail(ErrorCode::config, "split sizes must be positive");
    const int signal = num_classes * 4;
    const int distract = task == SynthTask::distractor ? num_classes * 4 : 0;
    const int values = task == SynthTask::regression ? 6 : 0;
    if (vocab_size < signal + distract + values + 8)
        fail(ErrorCode::config, "vocab_size too small for disjoint signal token sets");
}

namespace {

struct TokenPools {
    std::vector<std::vector<std::string>> signal;     // per class
    std::vector<std::vector<std::string>> distractor; // per class
    std::vector<std::string> values;                  // v0..v5
    std::vector<std::string> filler;
};

TokenPools build_pools(const SynthSpec& spec) {
    TokenPools pools;
    int used = 0;
    pools.signal.resize(spec.num_classes);
    for (int c = 0; c < spec.num_classes; ++c)
        for (int i = 0; i < 4; ++i, ++used)
            pools.signal[c].push_back("s" + std::to_string(c) + "_" + std::to_string(i));
    if (spec.task == SynthTask::distractor) {
        pools.distractor.resize(spec.num_classes);
        for (int c = 0; c < spec.num_classes; ++c)
            for (int i = 0; i < 4; ++i, ++used)
                pools.distractor[c].push_back("d" + std::to_string(c) + "_" + std::to_string(i));
    }
    if (spec.task == SynthTask::regression)
        for (int k = 0; k <= 5; ++k, ++used) pools.values.push_back("v" + std::to_string(k));
    for (int i = used; i < spec.vocab_size; ++i) pools.filler.push_back("w" + std::to_string(i));
    return pools;
}

Document make_doc(const SynthSpec& spec, const TokenPools& pools, const std::string& id, Rng& rng) {
    Document doc;
    doc.id = id;
    const int n = spec.n_sentences;
    const int k_gold = std::clamp(budget_ceil(spec.signal_fraction * n), 1, n);

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<int> gold(n, 0);
    for (int i = 0; i < k_gold; ++i) gold[order[i]] = 1;

    auto filler_token = [&] { return pools.filler[rng.next_below(pools.filler.size())]; };

    doc.sentences.assign(n, {});
    for (int s = 0; s < n; ++s) {
        auto& sent = doc.sentences[s];
        sent.resize(spec.sentence_len);
        for (auto& t : sent) t = filler_token();
    }

    if (spec.task == SynthTask::regression) {
        doc.regression = true;
        double total = 0.0;
        for (int s = 0; s < n; ++s) {
            if (!gold[s]) continue;
            const int v = static_cast<int>(rng.next_below(6));
            total += v;
            doc.sentences[s][rng.next_below(spec.sentence_len)] = pools.values[v];
        }
        doc.label_value = total / k_gold;
    } else {
        const int cls = static_cast<int>(rng.next_below(spec.num_classes));
        doc.label_name = "class" + std::to_string(cls);
        for (int s = 0; s < n; ++s) {
            if (gold[s]) {
                const auto& set = pools.signal[cls];
                doc.sentences[s][rng.next_below(spec.sentence_len)] = set[rng.next_below(set.size())];
            } else if (spec.task == SynthTask::distractor && rng.uniform() < spec.distractor_rate) {
                const auto& set = pools.distractor[cls];
                doc.sentences[s][rng.next_below(spec.sentence_len)] = set[rng.next_below(set.size())];
            }
        }
    }
    doc.gold_mask = gold;
    return doc;
}

std::vector<Document> make_split(const SynthSpec& spec, const TokenPools& pools,
                                 const std::string& name, int count, Rng rng) {
    std::vector<Document> docs;
    docs.reserve(count);
    for (int i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "%s-%05d", name.c_str(), i);
        docs.push_back(make_doc(spec, pools, id, rng));
    }
    return docs;
}

} // namespace

Splits generate(const SynthSpec& spec) {
    spec.validate();
    const TokenPools pools = build_pools(spec);
    Rng root(spec.seed, "synth");
    Splits out;
    out.train = make_split(spec, pools, "train", spec.num_train, root.split("train"));
    out.val = make_split(spec, pools, "val", spec.num_val, root.split("val"));
    out.test = make_split(spec, pools, "test", spec.num_test, root.split("test"));
    return out;
}

std::vector<Document> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read dataset file " + path);
    std::vector<Document> docs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail(ErrorCode::data, path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        try {
            Document doc;
            doc.id = j.value("id", std::string());
            if (!j.contains("sentences") || !j["sentences"].is_array() || j["sentences"].empty())
                fail(ErrorCode::data, "document needs at least one sentence");
            for (const auto& s : j["sentences"])
                doc.sentences.push_back(s.get<std::vector<std::string>>());
            if (j.contains("query") && !j["query"].is_null())
                doc.query = j["query"].get<std::vector<std::string>>();
            if (!j.contains("label")) fail(ErrorCode::data, "missing label");
            if (j["label"].is_number()) {
                doc.regression = true;
                doc.label_value = j["label"].get<double>();
            } else if (j["label"].is_string()) {
                doc.label_name = j["label"].get<std::string>();
            } else {
                fail(ErrorCode::data, "label must be a string or a number");
            }
            if (j.contains("gold_mask") && !j["gold_mask"].is_null()) {
                doc.gold_mask = j["gold_mask"].get<std::vector<int>>();
                if (doc.gold_mask->size() != doc.sentences.size())
                    fail(ErrorCode::data, "gold_mask length mismatch");
            }
            if (j.contains("gold_token_mask") && !j["gold_token_mask"].is_null()) {
                doc.gold_token_mask = j["gold_token_mask"].get<std::vector<int>>();
                if (doc.gold_token_mask->size() != doc.num_tokens())
                    fail(ErrorCode::data, "gold_token_mask length mismatch");
            }
            docs.push_back(std::move(doc));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            fail(ErrorCode::data, path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return docs;
}

void save_jsonl(const std::string& path, const std::vector<Document>& docs) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write dataset file " + path);
    for (const auto& doc : docs) {
        json j;
        j["id"] = doc.id;
        j["sentences"] = doc.sentences;
        if (doc.query) j["query"] = *doc.query;
        if (doc.regression) j["label"] = doc.label_value;
        else j["label"] = doc.label_name;
        if (doc.gold_mask) j["gold_mask"] = *doc.gold_mask;
        if (doc.gold_token_mask) j["gold_token_mask"] = *doc.gold_token_mask;
        out << j.dump() << "\n";
    }
}

namespace {

std::map<std::string, double> tfidf_vector(const std::vector<std::string>& tokens,
                                           const std::map<std::string, double>& idf) {
    std::map<std::string, double> tf;
    for (const auto& t : tokens) tf[t] += 1.0;
    for (auto& [term, weight] : tf) {
        auto it = idf.find(term);
        weight *= it == idf.end() ? 0.0 : it->second;
    }
    return tf;
}

double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [term, w] : a) {
        na += w * w;
        auto it = b.find(term);
        if (it != b.end()) dot += w * it->second;
    }
    for (const auto& [term, w] : b) nb += w * w;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace

std::pair<int, int> tfidf_span_select(const Document& doc, const std::vector<std::string>& query,
                                      int window_sentences) {
    if (window_sentences < 1) fail(ErrorCode::state, "tfidf_span_select: window must be >= 1");
    if (query.empty()) fail(ErrorCode::state, "tfidf_span_select: query required");
    const int n = static_cast<int>(doc.sentences.size());
    if (window_sentences >= n) return {0, n};

    // Sentence-level document frequencies; idf = log(N / (1 + df)).
    std::map<std::string, double> idf;
    for (const auto& sent : doc.sentences) {
        std::set<std::string> uniq(sent.begin(), sent.end());
        for (const auto& t : uniq) idf[t] += 1.0;
    }
    for (const auto& t : query)
        if (!idf.count(t)) idf[t] = 0.0;
    for (auto& [term, df] : idf) df = std::log(static_cast<double>(n) / (1.0 + df));

    const auto query_vec = tfidf_vector(query, idf);
    int best_start = 0;
    double best_score = -1.0;
    for (int start = 0; start + window_sentences <= n; ++start) {
        std::vector<std::string> span_tokens;
        for (int s = start; s < start + window_sentences; ++s)
            span_tokens.insert(span_tokens.end(), doc.sentences[s].begin(), doc.sentences[s].end());
        const double score = cosine(tfidf_vector(span_tokens, idf), query_vec);
        if (score > best_score) {
            best_score = score;
            best_start = start;
        }
    }
    return {best_start, window_sentences};
}

Document crop_to_span(const Document& doc, int start, int length) {
    if (start < 0 || length < 1 || start + length > static_cast<int>(doc.sentences.size()))
        fail(ErrorCode::state, "crop_to_span: invalid span");
    Document out = doc;
    out.sentences.assign(doc.sentences.begin() + start, doc.sentences.begin() + start + length);
    if (doc.gold_mask)
        out.gold_mask = std::vector<int>(doc.gold_mask->begin() + start,
                                         doc.gold_mask->begin() + start + length);
    if (doc.gold_token_mask) {
        std::size_t tok_start = 0;
        for (int s = 0; s < start; ++s) tok_start += doc.sentences[s].size();
        std::size_t tok_len = 0;
        for (int s = start; s < start + length; ++s) tok_len += doc.sentences[s].size();
        out.gold_token_mask = std::vector<int>(doc.gold_token_mask->begin() + tok_start,
                                               doc.gold_token_mask->begin() + tok_start + tok_len);
    }
    return out;
}

int unit_count(const Document& doc, Granularity granularity) {
    if (granularity == Granularity::sentence) return static_cast<int>(doc.sentences.size());
    return static_cast<int>(doc.num_tokens());
}

std::vector<int> expand_unit_mask_to_tokens(const Document& doc, const std::vector<int>& unit_mask,
                                            Granularity granularity) {
    if (granularity == Granularity::token) return unit_mask;
    std::vector<int> out;
    out.reserve(doc.num_tokens());
    for (std::size_t s = 0; s < doc.sentences.size(); ++s)
        out.insert(out.end(), doc.sentences[s].size(), unit_mask[s]);
    return out;
}

std::vector<int> gold_token_mask_of(const Document& doc, Granularity granularity) {
    if (doc.gold_token_mask) return *doc.gold_token_mask;
    if (doc.gold_mask) return expand_unit_mask_to_tokens(doc, *doc.gold_mask, Granularity::sentence);
    (void)granularity;
    return {};
}

namespace {

// Units of a document as token-id lists; token granularity flattens to
// single-token units. Empty sentences become a lone PAD token.
std::vector<std::vector<std::int64_t>> doc_units(const Document& doc, const Vocab& vocab,
                                                 Granularity granularity) {
    std::vector<std::vector<std::int64_t>> units;
    if (granularity == Granularity::sentence) {
        for (const auto& sent : doc.sentences) {
            std::vector<std::int64_t> ids;
            for (const auto& t : sent) ids.push_back(vocab.id(t));
            if (ids.empty()) ids.push_back(Vocab::kPad);
            units.push_back(std::move(ids));
        }
    } else {
        for (const auto& sent : doc.sentences)
            for (const auto& t : sent) units.push_back({vocab.id(t)});
    }
    return units;
}

std::vector<int> doc_gold_units(const Document& doc, Granularity granularity) {
    if (granularity == Granularity::sentence) {
        if (doc.gold_mask) return *doc.gold_mask;
        return {};
    }
    return gold_token_mask_of(doc, granularity);
}

} // namespace

Batch make_batch(const std::vector<const Document*>& docs, const Vocab& vocab,
                 const LabelMap& labels, Granularity granularity) {
    if (docs.empty()) fail(ErrorCode::state, "make_batch: empty document list");
    Batch b;
    b.size = static_cast<int>(docs.size());
    b.docs = docs;

    std::vector<std::vector<std::vector<std::int64_t>>> all_units;
    all_units.reserve(docs.size());
    for (const auto* doc : docs) {
        if (doc->sentences.empty()) fail(ErrorCode::data, "document '" + doc->id + "' has no sentences");
        all_units.push_back(doc_units(*doc, vocab, granularity));
        b.units = std::max(b.units, static_cast<int>(all_units.back().size()));
        for (const auto& u : all_units.back())
            b.unit_len = std::max(b.unit_len, static_cast<int>(u.size()));
        if (doc->query) {
            b.has_query = true;
            b.query_len = std::max(b.query_len, static_cast<int>(doc->query->size()));
        }
    }
    b.query_len = std::max(b.query_len, 1);

    const int slots = b.size * b.units;
    b.token_ids.assign(static_cast<std::size_t>(slots) * b.unit_len, Vocab::kPad);
    b.token_valid.assign(static_cast<std::size_t>(slots) * b.unit_len, 0.0);
    b.first_ids.assign(slots, Vocab::kPad);
    b.last_ids.assign(slots, Vocab::kPad);
    b.unit_valid.assign(slots, 0.0);
    b.gold_units.assign(slots, 0.0);
    b.n_units.assign(b.size, 0);
    b.label_ids.assign(b.size, 0);
    b.label_values.assign(b.size, 0.0);
    b.has_gold.assign(b.size, 0);
    if (b.has_query) {
        b.query_ids.assign(static_cast<std::size_t>(b.size) * b.query_len, Vocab::kPad);
        b.query_valid.assign(static_cast<std::size_t>(b.size) * b.query_len, 0.0);
        b.query_first.assign(b.size, Vocab::kPad);
        b.query_last.assign(b.size, Vocab::kPad);
    }

    for (int d = 0; d < b.size; ++d) {
        const Document& doc = *docs[d];
        const auto& units = all_units[static_cast<std::size_t>(d)];
        b.n_units[d] = static_cast<int>(units.size());
        const auto gold = doc_gold_units(doc, granularity);
        if (!gold.empty()) b.has_gold[d] = 1;
        for (std::size_t u = 0; u < units.size(); ++u) {
            const std::size_t slot = static_cast<std::size_t>(d) * b.units + u;
            b.unit_valid[slot] = 1.0;
            b.first_ids[slot] = units[u].front();
            b.last_ids[slot] = units[u].back();
            if (!gold.empty()) b.gold_units[slot] = gold[u];
            for (std::size_t t = 0; t < units[u].size(); ++t) {
                b.token_ids[slot * b.unit_len + t] = units[u][t];
                b.token_valid[slot * b.unit_len + t] = 1.0;
            }
        }
        if (doc.regression) {
            b.label_values[d] = doc.label_value;
        } else {
            b.label_ids[d] = labels.id(doc.label_name);
        }
        if (b.has_query && doc.query && !doc.query->empty()) {
            for (std::size_t t = 0; t < doc.query->size(); ++t) {
                b.query_ids[static_cast<std::size_t>(d) * b.query_len + t] = vocab.id((*doc.query)[t]);
                b.query_valid[static_cast<std::size_t>(d) * b.query_len + t] = 1.0;
            }
            b.query_first[d] = vocab.id(doc.query->front());
            b.query_last[d] = vocab.id(doc.query->back());
        }
    }
    return b;
}

std::vector<Batch> make_batches(const std::vector<const Document*>& docs, int batch_size,
                                const Vocab& vocab, const LabelMap& labels,
                                Granularity granularity) {
    if (batch_size < 1) fail(ErrorCode::config, "batch_size must be >= 1");
    std::vector<Batch> out;
    for (std::size_t start = 0; start < docs.size(); start += batch_size) {
        const std::size_t end = std::min(docs.size(), start + batch_size);
        out.push_back(make_batch({docs.begin() + start, docs.begin() + end}, vocab, labels, granularity));
    }
    return out;
}

const char* granularity_name(Granularity g) {
    return g == Granularity::sentence ? "sentence" : "token";
}

Granularity granularity_from_name(const std::string& name) {
    if (name == "sentence") return Granularity::sentence;
    if (name == "token") return Granularity::token;
    fail(ErrorCode::config, "unknown granularity '" + name + "'");
}

const char* synth_task_name(SynthTask t) {
    switch (t) {
        case SynthTask::classification: return "classification";
        case SynthTask::regression: return "regression";
        case SynthTask::distractor: return "distractor";
    }
    return "?";
}

SynthTask synth_task_from_name(const std::string& name) {
    if (name == "classification") return SynthTask::classification;
    if (name == "regression") return SynthTask::regression;
    if (name == "distractor") return SynthTask::distractor;
    fail(ErrorCode::config, "unknown task '" + name + "'");
}

} // namespace sibre::data
