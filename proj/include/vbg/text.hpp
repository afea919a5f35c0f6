#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "vbg/document.hpp"

namespace vbg {

inline constexpr int kChunkLen = 512;
inline constexpr int kChunkPayload = 510;

class Vocabulary {
public:
    static constexpr const char* kCls = "[CLS]";
    static constexpr const char* kSep = "[SEP]";
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kUnk = "[UNK]";

    // Pieces must start with the four special tokens, in the order above.
    explicit Vocabulary(std::vector<std::string> pieces);

    int size() const { return static_cast<int>(pieces_.size()); }
    int cls_id() const { return 0; }
    int sep_id() const { return 1; }
    int pad_id() const { return 2; }
    int unk_id() const { return 3; }
    const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& pieces() const { return pieces_; }
    int id_of(const std::string& piece) const;  // -1 if absent

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    // Frequency-capped greedy merge induction over the corpus words.
    // Deterministic: ties broken lexicographically. Continuation pieces carry
    // the "##" prefix.
    static Vocabulary build(const std::vector<std::string>& corpus_words, int max_pieces = 2000);

private:
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
    std::vector<int> token_ids;   // length M
    std::vector<int> word_index;  // length M, non-decreasing
    int num_words = 0;
};

struct Chunk {
    std::vector<int> token_ids;  // exactly kChunkLen
    int payload_begin = 0;       // slice of the TokenSequence this chunk covers
    int payload_end = 0;
    int pad_count = 0;
};

// Greedy longest-match wordpiece segmentation per word.
TokenSequence tokenize(const Document& doc, const Vocabulary& vocab);
TokenSequence tokenize_words(const std::vector<std::string>& words, const Vocabulary& vocab);

// Sliding windows of `window` payload tokens (default: non-overlapping).
// The final chunk is padded to kChunkLen. M=0 yields one all-pad chunk.
std::vector<Chunk> chunk(const TokenSequence& tokens, const Vocabulary& vocab,
                         int window = kChunkPayload, int stride = kChunkPayload);

}  // namespace vbg
