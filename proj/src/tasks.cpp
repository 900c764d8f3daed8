#include "dcd/tasks.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

namespace dcd {

int Vocabulary::number_token(int value) const {
    if (value < 0 || value >= numbers.count())
        throw ConfigError("number outside the token alphabet: " + std::to_string(value));
    return numbers.begin + value;
}

int Vocabulary::number_value(int token) const {
    if (!numbers.contains(token)) throw ConfigError("token is not a number token");
    return token - numbers.begin;
}

Vocabulary Vocabulary::standard() {
    Vocabulary v{};
    int id = 0;
    v.t_when = id++;
    v.t_and = id++;
    v.t_went = id++;
    v.t_store = id++;
    v.t_gave = id++;
    v.t_obj = id++;
    v.t_to = id++;
    v.t_was = id++;
    v.t_given = id++;
    v.t_by = id++;
    v.t_filler_a = id++;
    v.t_filler_b = id++;
    v.t_in = id++;
    v.t_comma = id++;
    v.t_period = id++;
    v.t_contains = id++;
    v.t_plus = id++;
    v.t_eq = id++;
    v.t_v1a = id++;
    v.t_v2a = id++;
    v.t_v2b = id++;
    v.t_v3a = id++;
    v.t_vmid = id++;
    v.t_v3mid = id++;
    v.t_vans = id++;
    v.names = {id, id + 12};
    id += 12;
    v.letters = {id, id + 12};
    id += 12;
    v.containers = {id, id + 12};
    id += 12;
    v.numbers = {id, id + 21};
    id += 21;
    v.size = id;
    return v;
}

void PromptPair::validate() const {
    if (clean.size() != corrupt.size())
        throw AlignmentError("clean and corrupted prompts differ in length");
    if (answer_pos < 0 || answer_pos >= static_cast<int>(clean.size()))
        throw AlignmentError("answer position outside the prompt");
    if (counterfactuals.empty())
        throw AlignmentError("prompt pair needs at least one counterfactual label");
    for (int t : counterfactuals)
        if (t == correct)
            throw AlignmentError("correct label must not appear in counterfactual set");
}

namespace {

// Draw `count` distinct tokens from a class range.
std::vector<int> sample_distinct(Rng& rng, const Vocabulary::Range& range, int count,
                                 const std::vector<int>& exclude = {}) {
    std::vector<int> pool;
    for (int t = range.begin; t < range.end; ++t)
        if (std::find(exclude.begin(), exclude.end(), t) == exclude.end())
            pool.push_back(t);
    if (static_cast<int>(pool.size()) < count)
        throw ConfigError("vocabulary class too small for without-replacement draw");
    std::vector<int> out;
    for (int i = 0; i < count; ++i) {
        size_t j = rng.uniform_int(pool.size());
        out.push_back(pool[j]);
        pool.erase(pool.begin() + static_cast<long>(j));
    }
    return out;
}

int second_occurrence(const std::vector<int>& tokens, int value) {
    int seen = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == value && ++seen == 2) return static_cast<int>(i);
    }
    throw std::logic_error("token does not occur twice");
}

}  // namespace

std::vector<PromptPair> gen_ioi(IoiVariant variant, int n, uint64_t seed,
                                const Vocabulary& vocab) {
    Rng rng(mix_seed(seed, 0x101));
    std::vector<PromptPair> out;
    const bool letter_domain = variant == IoiVariant::letter;
    const Vocabulary::Range& pool = letter_domain ? vocab.letters : vocab.names;

    auto variant_name = [&]() -> const char* {
        switch (variant) {
            case IoiVariant::abba: return "abba";
            case IoiVariant::baba: return "baba";
            case IoiVariant::mixed: return "mixed";
            case IoiVariant::three_person: return "3person";
            case IoiVariant::filler: return "filler";
            case IoiVariant::letter: return "letter";
            case IoiVariant::passive: return "passive";
        }
        return "?";
    };

    for (int i = 0; i < n; ++i) {
        PromptPair p;
        p.task = "ioi";
        p.variant = variant_name();
        p.seed = seed;
        if (variant == IoiVariant::three_person) {
            auto nm = sample_distinct(rng, pool, 3);
            int io = nm[0], s1 = nm[1], s2 = nm[2];
            std::vector<int> opening = {io, s1, s2};
            rng.shuffle(opening);
            p.clean = {vocab.t_when, opening[0], vocab.t_and, opening[1], vocab.t_and,
                       opening[2], vocab.t_went, vocab.t_store, s1, vocab.t_and,
                       s2, vocab.t_gave, vocab.t_obj, vocab.t_to};
            p.correct = io;
            p.counterfactuals = {s1, s2};
            // trailing subject pair replaced wholesale with fresh names
            auto fresh = sample_distinct(rng, pool, 2, {io, s1, s2});
            p.corrupt = p.clean;
            p.corrupt[8] = fresh[0];
            p.corrupt[10] = fresh[1];
        } else {
            auto nm = sample_distinct(rng, pool, 2);
            int io = nm[0], s = nm[1];
            bool io_first = true;
            if (variant == IoiVariant::baba) io_first = false;
            if (variant == IoiVariant::mixed) io_first = rng.uniform() < 0.5;
            int first = io_first ? io : s;
            int second = io_first ? s : io;
            switch (variant) {
                case IoiVariant::passive:
                    p.clean = {vocab.t_when, first, vocab.t_and, second, vocab.t_went,
                               vocab.t_store, s, vocab.t_was, vocab.t_given,
                               vocab.t_obj, vocab.t_by};
                    break;
                case IoiVariant::filler:
                    p.clean = {vocab.t_when, first, vocab.t_and, second, vocab.t_went,
                               vocab.t_store, io, vocab.t_filler_a, vocab.t_filler_b,
                               s, vocab.t_gave, vocab.t_obj, vocab.t_to};
                    break;
                default:
                    p.clean = {vocab.t_when, first, vocab.t_and, second, vocab.t_went,
                               vocab.t_store, s, vocab.t_gave, vocab.t_obj, vocab.t_to};
                    break;
            }
            p.correct = io;
            p.counterfactuals = {s};
            int pos = second_occurrence(p.clean, s);
            int fresh = sample_distinct(rng, pool, 1, {io, s})[0];
            p.corrupt = p.clean;
            p.corrupt[pos] = fresh;
        }
        p.answer_pos = static_cast<int>(p.clean.size()) - 1;
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PromptPair> gen_entity_binding(const EbVariant& variant, int count,
                                           uint64_t seed, const Vocabulary& vocab) {
    const int n = variant.kind == EbVariant::Kind::position_k ? 8 : variant.n;
    if (n < 2 || n > 8) throw ConfigError("entity binding requires 2 <= n <= 8");
    if (variant.kind == EbVariant::Kind::position_k && (variant.k < 1 || variant.k > n))
        throw ConfigError("queried position must lie in [1, n]");
    const Vocabulary::Range& label_pool =
        variant.kind == EbVariant::Kind::color ? vocab.containers : vocab.letters;
    const int delim =
        variant.kind == EbVariant::Kind::period ? vocab.t_period : vocab.t_comma;

    Rng rng(mix_seed(seed, 0x0eb));
    std::vector<PromptPair> out;
    for (int i = 0; i < count; ++i) {
        PromptPair p;
        p.task = "entity_binding";
        p.seed = seed;
        switch (variant.kind) {
            case EbVariant::Kind::n_comma: p.variant = std::to_string(n) + "comma"; break;
            case EbVariant::Kind::position_k: p.variant = "p" + std::to_string(variant.k); break;
            case EbVariant::Kind::color: p.variant = "color"; break;
            case EbVariant::Kind::period: p.variant = std::to_string(n) + "period"; break;
        }
        auto entities = sample_distinct(rng, vocab.names, n);
        auto labels = sample_distinct(rng, label_pool, n);
        int query =
            variant.kind == EbVariant::Kind::position_k
                ? variant.k - 1
                : static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
        for (int j = 0; j < n; ++j) {
            p.clean.push_back(entities[j]);
            p.clean.push_back(vocab.t_in);
            p.clean.push_back(labels[j]);
            p.clean.push_back(j + 1 < n ? delim : vocab.t_period);
        }
        p.clean.push_back(labels[query]);
        p.clean.push_back(vocab.t_contains);
        p.correct = entities[query];
        for (int j = 0; j < n; ++j)
            if (j != query) p.counterfactuals.push_back(entities[j]);
        // corruption swaps only the trailing query identifier to an unused one
        int fresh = sample_distinct(rng, label_pool, 1, labels)[0];
        p.corrupt = p.clean;
        p.corrupt[p.clean.size() - 2] = fresh;
        p.answer_pos = static_cast<int>(p.clean.size()) - 1;
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PromptPair> gen_arithmetic(ArithVariant variant, int count, uint64_t seed,
                                       const Vocabulary& vocab) {
    Rng rng(mix_seed(seed, 0xa21));
    const int max_value = vocab.numbers.count() - 1;

    auto render = [&](const std::vector<int>& ops) {
        std::vector<int> t;
        switch (variant) {
            case ArithVariant::two_op:
                t = {vocab.number_token(ops[0]), vocab.t_plus, vocab.number_token(ops[1]),
                     vocab.t_eq};
                break;
            case ArithVariant::three_op:
                t = {vocab.number_token(ops[0]), vocab.t_plus, vocab.number_token(ops[1]),
                     vocab.t_plus, vocab.number_token(ops[2]), vocab.t_eq};
                break;
            case ArithVariant::verbal_v1:
                t = {vocab.t_v1a, vocab.number_token(ops[0]), vocab.t_vmid,
                     vocab.number_token(ops[1]), vocab.t_vans};
                break;
            case ArithVariant::verbal_v2:
                t = {vocab.t_v2a, vocab.t_v2b, vocab.number_token(ops[0]), vocab.t_vmid,
                     vocab.number_token(ops[1]), vocab.t_vans};
                break;
            case ArithVariant::verbal_v3:
                t = {vocab.t_v3a, vocab.number_token(ops[0]), vocab.t_v3mid,
                     vocab.number_token(ops[1]), vocab.t_vans};
                break;
        }
        return t;
    };
    auto variant_name = [&]() -> const char* {
        switch (variant) {
            case ArithVariant::two_op: return "two_op";
            case ArithVariant::three_op: return "three_op";
            case ArithVariant::verbal_v1: return "verbal_v1";
            case ArithVariant::verbal_v2: return "verbal_v2";
            case ArithVariant::verbal_v3: return "verbal_v3";
        }
        return "?";
    };
    const int n_ops = variant == ArithVariant::three_op ? 3 : 2;

    std::vector<std::vector<int>> operand_sets;
    std::vector<std::vector<int>> prompts;
    for (int i = 0; i < count; ++i) {
        // rejection keeps operands uniform over tuples with in-range sums
        std::vector<int> ops(n_ops);
        for (;;) {
            int sum = 0;
            for (int& o : ops) {
                o = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_value + 1)));
                sum += o;
            }
            if (sum <= max_value) break;
        }
        operand_sets.push_back(ops);
        prompts.push_back(render(ops));
    }

    // corrupted prompt = next entry of the seeded pre-shuffled prompt list
    std::vector<int> order(count);
    for (int i = 0; i < count; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<int> corrupt_source(count, -1);
    for (int j = 0; j < count; ++j) {
        int self = order[j];
        for (int step = 1; step <= count; ++step) {
            int cand = order[(j + step) % count];
            if (operand_sets[cand] != operand_sets[self]) {
                corrupt_source[self] = cand;
                break;
            }
        }
        if (corrupt_source[self] < 0)
            throw ConfigError("arithmetic corruption needs at least two distinct prompts");
    }

    std::vector<PromptPair> out;
    for (int i = 0; i < count; ++i) {
        PromptPair p;
        p.task = "arithmetic";
        p.variant = variant_name();
        p.seed = seed;
        p.clean = prompts[i];
        p.corrupt = prompts[corrupt_source[i]];
        int sum = 0;
        for (int o : operand_sets[i]) sum += o;
        p.correct = vocab.number_token(sum);
        for (int v = 0; v <= max_value; ++v)
            if (v != sum) p.counterfactuals.push_back(vocab.number_token(v));
        p.answer_pos = static_cast<int>(p.clean.size()) - 1;
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PromptPair> gen_sequence_completion(int k_gram, int count, uint64_t seed,
                                                const Vocabulary& vocab) {
    if (k_gram < 2 || k_gram > 4) throw ConfigError("sequence completion supports k in {2,3,4}");
    Rng rng(mix_seed(seed, 0x5c0));
    std::vector<PromptPair> out;
    for (int i = 0; i < count; ++i) {
        PromptPair p;
        p.task = "sequence_completion";
        p.variant = std::to_string(k_gram) + "gram";
        p.seed = seed;

        auto base = sample_distinct(rng, vocab.names, 5);
        // discriminative pattern index: the token a (k-1)-token context must
        // disambiguate; the middle repetition is a foil for k >= 3
        const int d = k_gram == 2 ? 3 : (k_gram == 3 ? 2 : 1);
        std::vector<int> used = base;
        std::vector<int> foil = base;
        if (k_gram >= 3) {
            auto f = sample_distinct(rng, vocab.names, 2, used);
            foil[d] = f[0];
            foil[4] = f[1];
            used.insert(used.end(), f.begin(), f.end());
        }
        std::vector<int> partial(base.begin(), base.begin() + 4);
        auto append = [&](std::vector<int>& v, const std::vector<int>& rep) {
            v.insert(v.end(), rep.begin(), rep.end());
        };
        append(p.clean, base);
        append(p.clean, k_gram == 2 ? base : foil);
        append(p.clean, partial);

        // corruption replaces the discriminative tokens in every base
        // occurrence (foils stay intact) with tokens absent from the clean
        // sequence
        auto fresh = sample_distinct(rng, vocab.names, 2, used);
        std::vector<int> cbase = base;
        cbase[d] = fresh[0];
        cbase[4] = fresh[1];
        std::vector<int> cpartial(cbase.begin(), cbase.begin() + 4);
        append(p.corrupt, cbase);
        append(p.corrupt, k_gram == 2 ? cbase : foil);
        append(p.corrupt, cpartial);

        p.correct = base[4];
        std::set<int> cf(p.clean.begin(), p.clean.end());
        cf.erase(p.correct);
        p.counterfactuals.assign(cf.begin(), cf.end());
        p.answer_pos = static_cast<int>(p.clean.size()) - 1;
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PromptPair> generate(const std::string& task, const std::string& variant,
                                 int n, uint64_t seed, const Vocabulary& vocab) {
    if (task == "ioi") {
        IoiVariant v;
        if (variant == "abba") v = IoiVariant::abba;
        else if (variant == "baba") v = IoiVariant::baba;
        else if (variant == "mixed") v = IoiVariant::mixed;
        else if (variant == "3person") v = IoiVariant::three_person;
        else if (variant == "filler") v = IoiVariant::filler;
        else if (variant == "letter") v = IoiVariant::letter;
        else if (variant == "passive") v = IoiVariant::passive;
        else throw ConfigError("unknown ioi variant: " + variant);
        return gen_ioi(v, n, seed, vocab);
    }
    if (task == "entity_binding") {
        EbVariant v;
        if (variant == "color") {
            v.kind = EbVariant::Kind::color;
        } else if (variant.size() > 1 && variant[0] == 'p' &&
                   std::isdigit(static_cast<unsigned char>(variant[1]))) {
            v.kind = EbVariant::Kind::position_k;
            v.k = std::stoi(variant.substr(1));
        } else if (variant.find("comma") != std::string::npos) {
            v.kind = EbVariant::Kind::n_comma;
            v.n = std::stoi(variant.substr(0, variant.find("comma")));
        } else if (variant.find("period") != std::string::npos) {
            v.kind = EbVariant::Kind::period;
            v.n = std::stoi(variant.substr(0, variant.find("period")));
        } else {
            throw ConfigError("unknown entity_binding variant: " + variant);
        }
        return gen_entity_binding(v, n, seed, vocab);
    }
    if (task == "arithmetic") {
        ArithVariant v;
        if (variant == "two_op") v = ArithVariant::two_op;
        else if (variant == "three_op") v = ArithVariant::three_op;
        else if (variant == "verbal_v1") v = ArithVariant::verbal_v1;
        else if (variant == "verbal_v2") v = ArithVariant::verbal_v2;
        else if (variant == "verbal_v3") v = ArithVariant::verbal_v3;
        else throw ConfigError("unknown arithmetic variant: " + variant);
        return gen_arithmetic(v, n, seed, vocab);
    }
    if (task == "sequence_completion") {
        if (variant.size() == 5 && variant.substr(1) == "gram")
            return gen_sequence_completion(variant[0] - '0', n, seed, vocab);
        throw ConfigError("unknown sequence_completion variant: " + variant);
    }
    throw ConfigError("unknown task: " + task);
}

SplitDataset build_mixture(const DatasetSpec& spec, const Vocabulary& vocab) {
    if (spec.components.empty()) throw ConfigError("mixture needs at least one component");
    double total_w = 0.0;
    for (const auto& c : spec.components) {
        if (c.weight <= 0.0) throw ConfigError("mixture weights must be positive");
        total_w += c.weight;
    }
    if (std::abs(spec.train_frac + spec.val_frac + spec.test_frac - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");

    // largest-remainder apportionment of n_examples across components
    const int m = static_cast<int>(spec.components.size());
    std::vector<int> counts(m, 0);
    std::vector<std::pair<double, int>> rema(m);
    int assigned = 0;
    for (int i = 0; i < m; ++i) {
        double exact = spec.n_examples * spec.components[i].weight / total_w;
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        rema[i] = {exact - counts[i], i};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; assigned < spec.n_examples; ++i, ++assigned) counts[rema[i % m].second]++;

    std::vector<PromptPair> all;
    for (int i = 0; i < m; ++i) {
        if (counts[i] == 0) continue;
        auto part = generate(spec.components[i].task, spec.components[i].variant,
                             counts[i], mix_seed(spec.seed, 100 + i), vocab);
        if (part.empty()) throw ConfigError("mixture component produced no examples");
        all.insert(all.end(), part.begin(), part.end());
    }
    Rng rng(mix_seed(spec.seed, 0x3145));
    rng.shuffle(all);

    const int n = static_cast<int>(all.size());
    int n_train = static_cast<int>(std::lround(spec.train_frac * n));
    int n_val = static_cast<int>(std::lround(spec.val_frac * n));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);

    SplitDataset out;
    out.train.assign(all.begin(), all.begin() + n_train);
    out.val.assign(all.begin() + n_train, all.begin() + n_train + n_val);
    out.test.assign(all.begin() + n_train + n_val, all.end());
    return out;
}

void save_jsonl(const std::vector<PromptPair>& pairs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open dataset for writing: " + path);
    for (const auto& p : pairs) {
        nlohmann::json j = {{"task", p.task},
                            {"variant", p.variant},
                            {"clean", p.clean},
                            {"corrupt", p.corrupt},
                            {"answer_pos", p.answer_pos},
                            {"correct", p.correct},
                            {"counterfactuals", p.counterfactuals},
                            {"seed", p.seed}};
        out << j.dump() << "\n";
    }
}

std::vector<PromptPair> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::vector<PromptPair> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        PromptPair p;
        p.task = j.at("task").get<std::string>();
        p.variant = j.at("variant").get<std::string>();
        p.clean = j.at("clean").get<std::vector<int>>();
        p.corrupt = j.at("corrupt").get<std::vector<int>>();
        p.answer_pos = j.at("answer_pos").get<int>();
        p.correct = j.at("correct").get<int>();
        p.counterfactuals = j.at("counterfactuals").get<std::vector<int>>();
        p.seed = j.at("seed").get<uint64_t>();
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<TrainExample> to_train_examples(const std::vector<PromptPair>& pairs) {
    std::vector<TrainExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({p.clean, p.answer_pos, p.correct});
    return out;
}

MetricSpec metric_spec_of(const PromptPair& pair) {
    return {pair.answer_pos, pair.correct, pair.counterfactuals};
}

}  // namespace dcd
