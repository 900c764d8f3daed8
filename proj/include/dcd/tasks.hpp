#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcd/common.hpp"
#include "dcd/model.hpp"

namespace dcd {

/// Disjoint token-id classes over a flat abstract vocabulary. Templates are
/// fixed token skeletons with slots, so clean/corrupted length alignment is
/// exact by construction.
struct Vocabulary {
    struct Range {
        int begin = 0, end = 0;
        int count() const { return end - begin; }
        bool contains(int t) const { return t >= begin && t < end; }
    };

    // template / function tokens
    int t_when, t_and, t_went, t_store, t_gave, t_obj, t_to, t_was, t_given, t_by;
    int t_filler_a, t_filler_b;
    int t_in, t_comma, t_period, t_contains;
    int t_plus, t_eq;
    int t_v1a, t_v2a, t_v2b, t_v3a, t_vmid, t_v3mid, t_vans;

    Range names;       // IOI names, EB entities, SC alphabet
    Range letters;     // letter-label domain (IOI letter, EB letter boxes)
    Range containers;  // color-label domain for EB
    Range numbers;     // arithmetic operands/sums; token = numbers.begin + value
    int size = 0;

    int number_token(int value) const;
    int number_value(int token) const;

    static Vocabulary standard();
};

struct PromptPair {
    std::string task;
    std::string variant;
    std::vector<int> clean;
    std::vector<int> corrupt;
    int answer_pos = 0;
    int correct = 0;
    std::vector<int> counterfactuals;
    uint64_t seed = 0;

    void validate() const;  // length alignment, label membership
};

enum class IoiVariant { abba, baba, mixed, three_person, filler, letter, passive };

struct EbVariant {
    enum class Kind { n_comma, position_k, color, period } kind = Kind::n_comma;
    int n = 2;  // pair count
    int k = 1;  // queried position, 1-based (position_k only; n fixed at 8)
};

enum class ArithVariant { two_op, three_op, verbal_v1, verbal_v2, verbal_v3 };

std::vector<PromptPair> gen_ioi(IoiVariant variant, int n, uint64_t seed,
                                const Vocabulary& vocab = Vocabulary::standard());
std::vector<PromptPair> gen_entity_binding(const EbVariant& variant, int count,
                                           uint64_t seed,
                                           const Vocabulary& vocab = Vocabulary::standard());
std::vector<PromptPair> gen_arithmetic(ArithVariant variant, int count, uint64_t seed,
                                       const Vocabulary& vocab = Vocabulary::standard());
std::vector<PromptPair> gen_sequence_completion(int k_gram, int count, uint64_t seed,
                                                const Vocabulary& vocab = Vocabulary::standard());

/// Dispatch by (task, variant) name as used in config files and dataset ids.
/// Tasks: ioi, entity_binding, arithmetic, sequence_completion. Variants:
/// abba|baba|mixed|3person|filler|letter|passive; Ncomma|pK|color|period;
/// two_op|three_op|verbal_v1..v3; 2gram|3gram|4gram.
std::vector<PromptPair> generate(const std::string& task, const std::string& variant,
                                 int n, uint64_t seed,
                                 const Vocabulary& vocab = Vocabulary::standard());

struct DatasetSpec {
    struct Component {
        std::string task;
        std::string variant;
        double weight = 1.0;
    };
    std::vector<Component> components;
    int n_examples = 100;
    double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
    uint64_t seed = 32;
};

struct SplitDataset {
    std::vector<PromptPair> train, val, test;
};

SplitDataset build_mixture(const DatasetSpec& spec,
                           const Vocabulary& vocab = Vocabulary::standard());

void save_jsonl(const std::vector<PromptPair>& pairs, const std::string& path);
std::vector<PromptPair> load_jsonl(const std::string& path);

std::vector<TrainExample> to_train_examples(const std::vector<PromptPair>& pairs);

MetricSpec metric_spec_of(const PromptPair& pair);

}  // namespace dcd
