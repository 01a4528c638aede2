#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sibre/rng.hpp"

namespace sibre::data {

enum class Granularity { sentence, token };

struct Document {
    std::string id;
    std::vector<std::vector<std::string>> sentences; // token strings per sentence
    std::optional<std::vector<std::string>> query;
    std::string label_name;              // classification
    double label_value = 0.0;            // regression
    bool regression = false;
    std::optional<std::vector<int>> gold_mask;       // 0/1 per sentence
    std::optional<std::vector<int>> gold_token_mask; // 0/1 per token, sentences flattened

    std::size_t num_tokens() const;
};

bool operator==(const Document& a, const Document& b);

// Token ids dense from 0 with PAD=0 and UNK=1 reserved.
class Vocab {
public:
    static constexpr std::int64_t kPad = 0;
    static constexpr std::int64_t kUnk = 1;

    Vocab();
    static Vocab build(const std::vector<Document>& train_docs);

    std::int64_t id(const std::string& token) const; // kUnk when missing
    std::int64_t add(const std::string& token);
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::map<std::string, std::int64_t> index_;
};

// Stable class-name -> id map (sorted names). Empty for regression tasks.
class LabelMap {
public:
    static LabelMap build(const std::vector<Document>& train_docs);
    int id(const std::string& name) const; // errors on unseen label
    const std::vector<std::string>& names() const { return names_; }
    int size() const { return static_cast<int>(names_.size()); }

    void save(const std::string& path) const;
    static LabelMap load(const std::string& path);

private:
    std::vector<std::string> names_;
    std::map<std::string, int> index_;
};

enum class SynthTask { classification, regression, distractor };

struct SynthSpec {
    SynthTask task = SynthTask::classification;
    int n_sentences = 10;
    int sentence_len = 6;
    double signal_fraction = 0.2;
    int vocab_size = 300;
    int num_classes = 2;
    double distractor_rate = 0.0; // rho, used by the distractor task
    int num_train = 2000;
    int num_val = 500;
    int num_test = 500;
    std::uint64_t seed = 1;

    void validate() const;
};

struct Splits {
    std::vector<Document> train, val, test;
};

// Synthetic benchmark with known gold rationales. Token naming is part of
// the contract so that oracle tests can recover the generating rule:
//   s{c}_{i}  signal token i of class c
//   d{c}_{i}  distractor token i of class c (distractor task only)
//   v{k}      value token, k in 0..5 (regression only)
//   w{i}      filler
Splits generate(const SynthSpec& spec);

std::vector<Document> load_jsonl(const std::string& path);
void save_jsonl(const std::string& path, const std::vector<Document>& docs);

// Best window-length contiguous sentence span by TF-IDF cosine similarity
// against the query; earliest span wins ties. Returns {start, length}.
// A window larger than the document selects the whole document.
std::pair<int, int> tfidf_span_select(const Document& doc, const std::vector<std::string>& query,
                                      int window_sentences);
Document crop_to_span(const Document& doc, int start, int length);

// Fixed-shape minibatch. All per-unit buffers are row-major [B * units] and
// padded slots carry zero validity so they never enter KL, norms, budgets,
// or metrics.
struct Batch {
    int size = 0;     // documents
    int units = 0;    // unit slots per document
    int unit_len = 0; // token slots per unit

    std::vector<std::int64_t> token_ids;  // [B * units * unit_len]
    std::vector<double> token_valid;      // same layout
    std::vector<std::int64_t> first_ids;  // [B * units]
    std::vector<std::int64_t> last_ids;   // [B * units]
    std::vector<double> unit_valid;       // [B * units]
    std::vector<int> n_units;             // valid units per document

    std::vector<int> label_ids;        // classification
    std::vector<double> label_values;  // regression
    std::vector<std::int8_t> has_gold; // per document
    std::vector<double> gold_units;    // [B * units], 0 where absent/invalid

    bool has_query = false;
    int query_len = 0;
    std::vector<std::int64_t> query_ids; // [B * query_len]
    std::vector<double> query_valid;
    std::vector<std::int64_t> query_first, query_last; // [B]

    std::vector<const Document*> docs;
};

Batch make_batch(const std::vector<const Document*>& docs, const Vocab& vocab,
                 const LabelMap& labels, Granularity granularity);

// Splits docs into consecutive batches of at most batch_size.
std::vector<Batch> make_batches(const std::vector<const Document*>& docs, int batch_size,
                                const Vocab& vocab, const LabelMap& labels,
                                Granularity granularity);

// Token units of a document under the given granularity (sentence units
// expand to their token count when converting masks for metrics).
std::vector<int> expand_unit_mask_to_tokens(const Document& doc, const std::vector<int>& unit_mask,
                                            Granularity granularity);
std::vector<int> gold_token_mask_of(const Document& doc, Granularity granularity);
int unit_count(const Document& doc, Granularity granularity);

const char* granularity_name(Granularity g);
Granularity granularity_from_name(const std::string& name);
const char* synth_task_name(SynthTask t);
SynthTask synth_task_from_name(const std::string& name);

} // namespace sibre::data
