#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "maskaug/rng.hpp"

namespace maskaug {

// BIO tag attached to every token.
enum class Label : std::uint8_t { B = 0, I = 1, O = 2 };

char label_to_char(Label l);
Label label_from_char(char c, std::size_t line_no = 0);
inline int label_index(Label l) { return static_cast<int>(l); }
inline constexpr int kNumLabels = 3;

// Raised on malformed corpus/template/thesaurus input; carries a line number
// when one is known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, std::size_t line_no);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// 1-based inclusive token span of one aspect term.
struct Span {
    int start = 0;
    int end = 0;
    bool operator==(const Span&) const = default;
};

// A tokenized sentence with one BIO label per token. Immutable once built;
// the constructor enforces equal lengths, non-empty whitespace-free tokens
// and BIO well-formedness (every I preceded by B or I).
class LabeledSentence {
public:
    LabeledSentence(std::vector<std::string> tokens, std::vector<Label> labels);

    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::vector<Label>& labels() const { return labels_; }
    int size() const { return static_cast<int>(tokens_.size()); }

    bool operator==(const LabeledSentence&) const = default;

private:
    std::vector<std::string> tokens_;
    std::vector<Label> labels_;
};

struct Corpus {
    std::vector<LabeledSentence> sentences;
    std::string name;

    bool operator==(const Corpus& other) const { return sentences == other.sentences; }
};

// Maximal B(I)* runs, in order. Input must be BIO well-formed.
std::vector<Span> spans_from_bio(const std::vector<Label>& labels);

// CoNLL-style TSV: one "token<TAB>label" line per token, blank line between
// sentences. parse_conll reports malformed lines, unknown tags and BIO
// violations with their line number; with permissive=true an orphan I is
// coerced to B instead.
Corpus parse_conll(const std::string& text, const std::string& name = "", bool permissive = false);
std::string serialize_conll(const Corpus& corpus);

Corpus load_conll_file(const std::string& path, bool permissive = false);
void save_conll_file(const Corpus& corpus, const std::string& path);

// Token-id vocabulary with six reserved ids at the front:
//   0 [MASK]  1 [BOS]  2 [EOS]  3 [PAD]  4 [UNK]  5 [ASP]
// Remaining ids are corpus tokens ordered by descending frequency, ties
// broken lexicographically. Lookup of an unknown token yields UNK.
class Vocab {
public:
    static constexpr int kMask = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kPad = 3;
    static constexpr int kUnk = 4;
    static constexpr int kAsp = 5;
    static constexpr int kNumSpecials = 6;

    static const std::vector<std::string>& special_tokens();
    static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

    Vocab();                                            // specials only
    explicit Vocab(std::vector<std::string> tokens);    // full id->token list, specials first

    int lookup(const std::string& token) const;         // UNK when absent
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }

    std::vector<int> encode(const std::vector<std::string>& tokens) const;

    const std::vector<std::string>& tokens() const { return tokens_; }

    // Ids of non-reserved tokens; the candidate set for free generation.
    std::vector<int> content_ids() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> id_by_token_;
};

// Tokens with frequency >= min_count, plus the six reserved tokens.
Vocab build_vocab(const Corpus& corpus, int min_count = 1);

// Line-oriented sentence grammar:
//   POOL <name> <entry> [<entry> ...]
//   TEMPLATE <word-or-{pool}> ...
// Multi-token entries use '_' between words. A slot whose pool name starts
// with "ASP" emits B(I)* labels; everything else is O. '#' starts a comment.
class TemplateGrammar {
public:
    static TemplateGrammar parse(const std::string& text);
    static TemplateGrammar load_file(const std::string& path);

    LabeledSentence instantiate(Rng& rng) const;
    std::size_t template_count() const { return templates_.size(); }

    // Every distinct word an aspect slot can produce.
    std::vector<std::string> aspect_words() const;

private:
    struct Piece {
        std::string literal;   // used when pool is empty
        std::string pool;      // pool name for slot pieces
        bool is_aspect = false;
    };
    std::unordered_map<std::string, std::vector<std::string>> pools_;
    std::vector<std::vector<Piece>> templates_;
};

Corpus generate_synthetic_corpus(std::uint64_t grammar_seed, int n_sentences,
                                 const TemplateGrammar& grammar,
                                 const std::string& name = "synthetic");
Corpus generate_synthetic_corpus(std::uint64_t grammar_seed, int n_sentences,
                                 const std::string& template_file,
                                 const std::string& name = "synthetic");

}  // namespace maskaug
