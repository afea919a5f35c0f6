#include "vbg/text.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace vbg {

Vocabulary::Vocabulary(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
    const char* specials[] = {kCls, kSep, kPad, kUnk};
    if (pieces_.size() < 4)
        throw std::invalid_argument("vocabulary must contain the four special tokens");
    for (int i = 0; i < 4; ++i)
        if (pieces_[static_cast<std::size_t>(i)] != specials[i])
            throw std::invalid_argument("vocabulary must start with [CLS] [SEP] [PAD] [UNK]");
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        if (!index_.emplace(pieces_[i], static_cast<int>(i)).second)
            throw std::invalid_argument("duplicate vocabulary piece: " + pieces_[i]);
    }
}

int Vocabulary::id_of(const std::string& piece) const {
    auto it = index_.find(piece);
    return it == index_.end() ? -1 : it->second;
}

void Vocabulary::save(const std::string& path) const {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        for (const std::string& p : pieces_) out << p << "\n";
    }
    std::filesystem::rename(tmp, path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary " + path);
    std::vector<std::string> pieces;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) pieces.push_back(line);
    return Vocabulary(std::move(pieces));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus_words, int max_pieces) {
    // Word frequency table; each word as a symbol sequence (first char plain,
    // continuations "##"-prefixed).
    std::map<std::string, int> word_freq;
    for (const std::string& w : corpus_words)
        if (!w.empty()) ++word_freq[w];

    std::map<std::string, long long> sym_freq;  // seed alphabet
    std::vector<std::pair<std::vector<std::string>, int>> sequences;
    for (const auto& [word, freq] : word_freq) {
        std::vector<std::string> syms;
        for (std::size_t i = 0; i < word.size(); ++i) {
            std::string s = (i == 0 ? "" : "##") + std::string(1, word[i]);
            syms.push_back(s);
            sym_freq[s] += freq;
        }
        sequences.emplace_back(std::move(syms), freq);
    }

    std::vector<std::string> pieces = {kCls, kSep, kPad, kUnk};
    for (const auto& [s, f] : sym_freq) pieces.push_back(s);  // lexicographic, deterministic

    // Greedy pair merges until the cap.
    auto merge_of = [](const std::string& a, const std::string& b) {
        return a + (b.rfind("##", 0) == 0 ? b.substr(2) : b);
    };
    while (static_cast<int>(pieces.size()) < max_pieces) {
        std::map<std::pair<std::string, std::string>, long long> pair_freq;
        for (const auto& [syms, freq] : sequences)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                pair_freq[{syms[i], syms[i + 1]}] += freq;
        std::pair<std::string, std::string> best;
        long long best_freq = 1;  // require frequency >= 2
        for (const auto& [pair, freq] : pair_freq)
            if (freq > best_freq || (freq == best_freq && best_freq > 1 && pair < best)) {
                best = pair;
                best_freq = freq;
            }
        if (best_freq < 2) break;
        const std::string merged = merge_of(best.first, best.second);
        pieces.push_back(merged);
        for (auto& [syms, freq] : sequences) {
            for (std::size_t i = 0; i + 1 < syms.size();) {
                if (syms[i] == best.first && syms[i + 1] == best.second) {
                    syms[i] = merged;
                    syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                } else {
                    ++i;
                }
            }
        }
    }
    return Vocabulary(std::move(pieces));
}

TokenSequence tokenize_words(const std::vector<std::string>& words, const Vocabulary& vocab) {
    TokenSequence seq;
    seq.num_words = static_cast<int>(words.size());
    for (std::size_t wi = 0; wi < words.size(); ++wi) {
        const std::string& word = words[wi];
        std::vector<int> word_tokens;
        bool bad = word.empty();
        std::size_t start = 0;
        while (!bad && start < word.size()) {
            int match = -1;
            std::size_t match_end = start;
            for (std::size_t end = word.size(); end > start; --end) {
                std::string piece =
                    (start == 0 ? "" : "##") + word.substr(start, end - start);
                int id = vocab.id_of(piece);
                if (id >= 0) {
                    match = id;
                    match_end = end;
                    break;
                }
            }
            if (match < 0) {
                bad = true;
            } else {
                word_tokens.push_back(match);
                start = match_end;
            }
        }
        if (bad) word_tokens = {vocab.unk_id()};
        for (int id : word_tokens) {
            seq.token_ids.push_back(id);
            seq.word_index.push_back(static_cast<int>(wi));
        }
    }
    return seq;
}

TokenSequence tokenize(const Document& doc, const Vocabulary& vocab) {
    std::vector<std::string> words;
    words.reserve(doc.words.size());
    for (const Word& w : doc.words) words.push_back(w.text);
    return tokenize_words(words, vocab);
}

std::vector<Chunk> chunk(const TokenSequence& tokens, const Vocabulary& vocab, int window,
                         int stride) {
    if (window < 1 || window > kChunkPayload || stride < 1 || stride > window)
        throw std::invalid_argument("chunk: invalid window/stride");
    const int m = static_cast<int>(tokens.token_ids.size());
    std::vector<Chunk> chunks;
    int start = 0;
    do {
        Chunk c;
        c.payload_begin = start;
        c.payload_end = std::min(start + window, m);
        c.token_ids.push_back(vocab.cls_id());
        for (int i = c.payload_begin; i < c.payload_end; ++i)
            c.token_ids.push_back(tokens.token_ids[static_cast<std::size_t>(i)]);
        c.token_ids.push_back(vocab.sep_id());
        c.pad_count = kChunkLen - static_cast<int>(c.token_ids.size());
        c.token_ids.resize(kChunkLen, vocab.pad_id());
        chunks.push_back(std::move(c));
        start += stride;
    } while (start < m);
    return chunks;
}

}  // namespace vbg
