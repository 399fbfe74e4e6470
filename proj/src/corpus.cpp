#include "maskaug/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace maskaug {

namespace {

bool has_whitespace(const std::string& s) {
    return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

}  // namespace

char label_to_char(Label l) {
    switch (l) {
        case Label::B: return 'B';
        case Label::I: return 'I';
        case Label::O: return 'O';
    }
    throw std::logic_error("label_to_char: invalid label");
}

Label label_from_char(char c, std::size_t line_no) {
    switch (c) {
        case 'B': return Label::B;
        case 'I': return Label::I;
        case 'O': return Label::O;
        default:
            throw ParseError(std::string("unknown label tag '") + c + "'", line_no);
    }
}

ParseError::ParseError(const std::string& msg, std::size_t line_no)
    : std::runtime_error(line_no ? "line " + std::to_string(line_no) + ": " + msg : msg),
      line_(line_no) {}

LabeledSentence::LabeledSentence(std::vector<std::string> tokens, std::vector<Label> labels)
    : tokens_(std::move(tokens)), labels_(std::move(labels)) {
    if (tokens_.empty()) throw std::invalid_argument("sentence must contain at least one token");
    if (tokens_.size() != labels_.size())
        throw std::invalid_argument("token/label length mismatch: " + std::to_string(tokens_.size()) +
                                    " vs " + std::to_string(labels_.size()));
    for (const auto& t : tokens_) {
        if (t.empty()) throw std::invalid_argument("empty token");
        if (has_whitespace(t)) throw std::invalid_argument("token contains whitespace: '" + t + "'");
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == Label::I && (i == 0 || labels_[i - 1] == Label::O))
            throw std::invalid_argument("I label at position " + std::to_string(i + 1) +
                                        " without preceding B/I");
    }
}

std::vector<Span> spans_from_bio(const std::vector<Label>& labels) {
    std::vector<Span> spans;
    int n = static_cast<int>(labels.size());
    for (int i = 0; i < n; ++i) {
        if (labels[i] == Label::B) {
            int j = i;
            while (j + 1 < n && labels[j + 1] == Label::I) ++j;
            spans.push_back({i + 1, j + 1});
            i = j;
        }
    }
    return spans;
}

Corpus parse_conll(const std::string& text, const std::string& name, bool permissive) {
    Corpus corpus;
    corpus.name = name;
    std::vector<std::string> tokens;
    std::vector<Label> labels;
    std::size_t sentence_start_line = 1;

    auto flush = [&](std::size_t line_no) {
        if (tokens.empty()) return;
        try {
            corpus.sentences.emplace_back(std::move(tokens), std::move(labels));
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), line_no);
        }
        tokens.clear();
        labels.clear();
    };

    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = strip_cr(raw);
        if (line.empty()) {
            flush(sentence_start_line);
            sentence_start_line = line_no + 1;
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
            throw ParseError("malformed line, expected 'token<TAB>label': '" + line + "'", line_no);
        std::string token = line.substr(0, tab);
        std::string tag = line.substr(tab + 1);
        if (tag.size() != 1) throw ParseError("unknown label tag '" + tag + "'", line_no);
        Label label = label_from_char(tag[0], line_no);
        if (label == Label::I && (labels.empty() || labels.back() == Label::O)) {
            if (permissive)
                label = Label::B;
            else
                throw ParseError("I without preceding B/I", line_no);
        }
        if (token.empty() || has_whitespace(token))
            throw ParseError("invalid token '" + token + "'", line_no);
        tokens.push_back(std::move(token));
        labels.push_back(label);
    }
    flush(sentence_start_line);
    return corpus;
}

std::string serialize_conll(const Corpus& corpus) {
    std::string out;
    for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
        const auto& sent = corpus.sentences[s];
        for (int i = 0; i < sent.size(); ++i) {
            out += sent.tokens()[i];
            out += '\t';
            out += label_to_char(sent.labels()[i]);
            out += '\n';
        }
        if (s + 1 < corpus.sentences.size()) out += '\n';
    }
    return out;
}

Corpus load_conll_file(const std::string& path, bool permissive) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string name = path;
    if (auto slash = name.find_last_of("/\\"); slash != std::string::npos) name = name.substr(slash + 1);
    if (auto dot = name.find_last_of('.'); dot != std::string::npos) name = name.substr(0, dot);
    return parse_conll(buf.str(), name, permissive);
}

void save_conll_file(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    out << serialize_conll(corpus);
    if (!out) throw std::runtime_error("error writing corpus file: " + path);
}

const std::vector<std::string>& Vocab::special_tokens() {
    static const std::vector<std::string> specials = {"[MASK]", "[BOS]", "[EOS]",
                                                      "[PAD]",  "[UNK]", "[ASP]"};
    return specials;
}

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto& specials = special_tokens();
    if (tokens_.size() < specials.size())
        throw std::invalid_argument("vocab must start with the reserved tokens");
    for (std::size_t i = 0; i < specials.size(); ++i) {
        if (tokens_[i] != specials[i])
            throw std::invalid_argument("vocab id " + std::to_string(i) + " must be " + specials[i]);
    }
    id_by_token_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, inserted] = id_by_token_.emplace(tokens_[i], static_cast<int>(i));
        if (!inserted) throw std::invalid_argument("duplicate vocab token: " + tokens_[i]);
    }
}

int Vocab::lookup(const std::string& token) const {
    auto it = id_by_token_.find(token);
    return it == id_by_token_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(lookup(t));
    return ids;
}

std::vector<int> Vocab::content_ids() const {
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(size() - kNumSpecials));
    for (int i = kNumSpecials; i < size(); ++i) ids.push_back(i);
    return ids;
}

Vocab build_vocab(const Corpus& corpus, int min_count) {
    if (corpus.sentences.empty()) throw std::invalid_argument("build_vocab: corpus is empty");
    std::map<std::string, long> counts;
    for (const auto& sent : corpus.sentences)
        for (const auto& tok : sent.tokens()) ++counts[tok];

    std::vector<std::pair<std::string, long>> entries(counts.begin(), counts.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::vector<std::string> tokens = Vocab::special_tokens();
    const auto& specials = Vocab::special_tokens();
    for (const auto& [tok, count] : entries) {
        if (count < min_count) continue;
        if (std::find(specials.begin(), specials.end(), tok) != specials.end()) continue;
        tokens.push_back(tok);
    }
    return Vocab(std::move(tokens));
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::vector<std::string> split_underscores(const std::string& entry, std::size_t line_no) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : entry) {
        if (c == '_') {
            if (cur.empty()) throw ParseError("empty word in pool entry '" + entry + "'", line_no);
            words.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (cur.empty()) throw ParseError("empty word in pool entry '" + entry + "'", line_no);
    words.push_back(cur);
    return words;
}

}  // namespace

TemplateGrammar TemplateGrammar::parse(const std::string& text) {
    TemplateGrammar g;
    std::vector<std::pair<std::vector<std::string>, std::size_t>> raw_templates;

    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = strip_cr(raw);
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_ws(line);
        if (fields[0] == "POOL") {
            if (fields.size() < 3) throw ParseError("POOL needs a name and at least one entry", line_no);
            auto& pool = g.pools_[fields[1]];
            for (std::size_t i = 2; i < fields.size(); ++i) {
                split_underscores(fields[i], line_no);  // validate early
                pool.push_back(fields[i]);
            }
        } else if (fields[0] == "TEMPLATE") {
            if (fields.size() < 2) throw ParseError("TEMPLATE needs at least one word", line_no);
            raw_templates.emplace_back(std::vector<std::string>(fields.begin() + 1, fields.end()), line_no);
        } else {
            throw ParseError("expected POOL or TEMPLATE, got '" + fields[0] + "'", line_no);
        }
    }
    if (raw_templates.empty()) throw ParseError("template file defines no TEMPLATE record", 0);

    for (auto& [words, tmpl_line] : raw_templates) {
        std::vector<Piece> pieces;
        for (const auto& w : words) {
            Piece p;
            if (w.size() >= 3 && w.front() == '{' && w.back() == '}') {
                p.pool = w.substr(1, w.size() - 2);
                auto it = g.pools_.find(p.pool);
                if (it == g.pools_.end() || it->second.empty())
                    throw ParseError("template references missing or empty pool '" + p.pool + "'",
                                     tmpl_line);
                p.is_aspect = p.pool.rfind("ASP", 0) == 0;
            } else {
                p.literal = w;
            }
            pieces.push_back(std::move(p));
        }
        g.templates_.push_back(std::move(pieces));
    }
    return g;
}

TemplateGrammar TemplateGrammar::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open template file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

LabeledSentence TemplateGrammar::instantiate(Rng& rng) const {
    const auto& tmpl = templates_[rng.uniform_index(templates_.size())];
    std::vector<std::string> tokens;
    std::vector<Label> labels;
    for (const auto& piece : tmpl) {
        if (piece.pool.empty()) {
            tokens.push_back(piece.literal);
            labels.push_back(Label::O);
            continue;
        }
        const auto& pool = pools_.at(piece.pool);
        const std::string& entry = pool[rng.uniform_index(pool.size())];
        auto words = split_underscores(entry, 0);
        for (std::size_t i = 0; i < words.size(); ++i) {
            tokens.push_back(words[i]);
            labels.push_back(piece.is_aspect ? (i == 0 ? Label::B : Label::I) : Label::O);
        }
    }
    return LabeledSentence(std::move(tokens), std::move(labels));
}

std::vector<std::string> TemplateGrammar::aspect_words() const {
    std::vector<std::string> words;
    for (const auto& [name, pool] : pools_) {
        if (name.rfind("ASP", 0) != 0) continue;
        for (const auto& entry : pool)
            for (const auto& w : split_underscores(entry, 0)) words.push_back(w);
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    return words;
}

Corpus generate_synthetic_corpus(std::uint64_t grammar_seed, int n_sentences,
                                 const TemplateGrammar& grammar, const std::string& name) {
    if (n_sentences <= 0) throw std::invalid_argument("n_sentences must be positive");
    Corpus corpus;
    corpus.name = name;
    corpus.sentences.reserve(static_cast<std::size_t>(n_sentences));
    for (int i = 0; i < n_sentences; ++i) {
        Rng rng(mix_seed(grammar_seed, static_cast<std::uint64_t>(i)));
        corpus.sentences.push_back(grammar.instantiate(rng));
    }
    return corpus;
}

Corpus generate_synthetic_corpus(std::uint64_t grammar_seed, int n_sentences,
                                 const std::string& template_file, const std::string& name) {
    return generate_synthetic_corpus(grammar_seed, n_sentences,
                                     TemplateGrammar::load_file(template_file), name);
}

}  // namespace maskaug
