//! Text primitives shared by every stage: normalization, tokenization, and
//! longest-common-substring length over token sequences.
//!
//! The tokenizer treats CJK codepoints as single-character tokens and groups
//! everything else into lowercase word runs, so mixed-script dialogue corpora
//! tokenize consistently across the BM25 index, the feature hasher, and the
//! LCS-based duplicate filters.

use unicode_normalization::UnicodeNormalization;

/// Normalize text: Unicode NFC, trim, and collapse internal whitespace runs
/// to a single space.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    let mut pending_space = false;
    for ch in nfc.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

/// True for codepoints tokenized character-by-character: CJK ideographs,
/// kana, and hangul syllables.
fn is_cjk(ch: char) -> bool {
    matches!(ch,
        '\u{3400}'..='\u{4DBF}'     // CJK extension A
        | '\u{4E00}'..='\u{9FFF}'   // CJK unified ideographs
        | '\u{F900}'..='\u{FAFF}'   // CJK compatibility ideographs
        | '\u{20000}'..='\u{2A6DF}' // CJK extension B
        | '\u{2A700}'..='\u{2EBEF}' // CJK extensions C-F
        | '\u{3040}'..='\u{30FF}'   // hiragana + katakana
        | '\u{31F0}'..='\u{31FF}'   // katakana phonetic extensions
        | '\u{AC00}'..='\u{D7AF}'   // hangul syllables
    )
}

fn is_word_char(ch: char) -> bool {
    !is_cjk(ch) && (ch.is_alphanumeric() || ch == '_')
}

/// Tokenize text: lowercase, CJK codepoints as single-character tokens,
/// maximal runs of other word characters as word tokens, punctuation dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if is_cjk(ch) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(ch.to_string());
        } else if is_word_char(ch) {
            word.push(ch);
        } else if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Length of the longest contiguous run of items common to `a` and `b`.
/// 0 if either sequence is empty.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // Classic DP over suffix-match lengths, rolling a single row. Keep the
    // shorter sequence as the row to bound memory by min(|a|, |b|).
    let (rows, cols) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; cols.len() + 1];
    let mut cur = vec![0usize; cols.len() + 1];
    let mut best = 0;
    for row_item in rows {
        for (j, col_item) in cols.iter().enumerate() {
            cur[j + 1] = if row_item == col_item { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize("  hello   world "), "hello world");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("a\t\n b"), "a b");
    }

    #[test]
    fn normalize_nfc_unifies_composed_forms() {
        let precomposed = "\u{e9}"; // é
        let decomposed = "e\u{301}";
        assert_eq!(normalize(precomposed), normalize(decomposed));
        assert_eq!(normalize(decomposed).as_bytes(), "\u{e9}".as_bytes());
    }

    #[test]
    fn normalize_is_idempotent() {
        for s in ["  a  b ", "héllo", "日本 語", ""] {
            let once = normalize(s);
            assert_eq!(normalize(&once), once);
        }
    }

    #[test]
    fn tokenize_mixed_scripts() {
        assert_eq!(tokenize("Hello 世界!"), vec!["hello", "世", "界"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("ABC abc"), vec!["abc", "abc"]);
    }

    #[test]
    fn tokenize_drops_punctuation_and_splits_cjk() {
        assert_eq!(tokenize("你好，世界"), vec!["你", "好", "世", "界"]);
        assert_eq!(tokenize("don't stop"), vec!["don", "t", "stop"]);
        assert_eq!(tokenize("a_b 42"), vec!["a_b", "42"]);
    }

    #[test]
    fn lcs_basic_cases() {
        let t = |s: &str| tokenize(s);
        assert_eq!(lcs_len(&t("a b c d"), &t("x b c y")), 2);
        let seven = t("a b c d e f g");
        assert_eq!(lcs_len(&seven, &seven), 7);
        assert_eq!(lcs_len(&t("a b"), &t("c d")), 0);
        assert_eq!(lcs_len(&t(""), &t("a")), 0);
    }

    #[test]
    fn lcs_matches_bruteforce_on_small_sequences() {
        // Brute-force oracle: enumerate all substrings of the shorter side.
        fn brute(a: &[u8], b: &[u8]) -> usize {
            let mut best = 0;
            for i in 0..a.len() {
                for j in i + 1..=a.len() {
                    let needle = &a[i..j];
                    if b.windows(needle.len()).any(|w| w == needle) {
                        best = best.max(needle.len());
                    }
                }
            }
            best
        }
        let mut state = 0x243F_6A88_85A3_08D3u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as u8 % 4
        };
        for _ in 0..200 {
            let a: Vec<u8> = (0..12).map(|_| next()).collect();
            let b: Vec<u8> = (0..9).map(|_| next()).collect();
            assert_eq!(lcs_len(&a, &b), brute(&a, &b));
        }
    }
}
