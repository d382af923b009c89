use crate::data::EmbeddingTable;

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Maps each word to its embedding row; unknown words become index 0.
pub fn tokenize(text: &str, table: &EmbeddingTable) -> Vec<usize> {
    words(text).iter().map(|w| table.index_of(w)).collect()
}
