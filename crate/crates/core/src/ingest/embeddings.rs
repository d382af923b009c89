use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;

use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Reads whitespace-separated `<token> <v1> ... <vE>` lines. A leading
/// word2vec-style `<count> <dim>` header line is accepted and skipped. Row 0
/// of the result is the reserved zero vector.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vocab = HashMap::new();
    let mut values: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if lineno == 1 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let vector = rest
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, lineno, format!("bad vector component: {e}")))?;
        if vector.is_empty() {
            return Err(Error::parse(path, lineno, format!("token `{token}` has no vector")));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite vector component"));
        }
        let e = *dim.get_or_insert(vector.len());
        if vector.len() != e {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {e} components, found {}", vector.len()),
            ));
        }
        if vocab.contains_key(token) {
            warn!("{}:{lineno}: duplicate token `{token}` ignored", path.display());
            continue;
        }
        if values.is_empty() {
            values.resize(e, 0.0);
        }
        vocab.insert(token.to_string(), vocab.len() + 1);
        values.extend(vector);
    }
    let e = dim.ok_or_else(|| Error::parse(path, 0, "embedding file is empty"))?;
    let rows = vocab.len() + 1;
    EmbeddingTable::new(vocab, Tensor::matrix(rows, e, values)?)
}

/// Writes tokens in row order, skipping the reserved row.
pub fn write_embeddings(path: &Path, tokens: &[String], vectors: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (tok, vec) in tokens.iter().zip(vectors) {
        let mut line = tok.clone();
        for v in vec {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn two_words_three_dims() {
        let (_d, p) = write("heart 0.1 0.2 0.3\nrate -1 0 1\n");
        let t = read_embeddings(&p).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.vectors().row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(t.vectors().row(t.index_of("rate")), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn duplicate_keeps_first() {
        let (_d, p) = write("a 1 1\nb 2 2\na 3 3\n");
        let t = read_embeddings(&p).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.vectors().row(t.index_of("a")), &[1.0, 1.0]);
    }

    #[test]
    fn inconsistent_dimension_reports_line() {
        let (_d, p) = write("a 1 1\nb 2 2 2\n");
        match read_embeddings(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn word2vec_header_skipped() {
        let (_d, p) = write("2 2\na 1 1\nb 2 2\n");
        let t = read_embeddings(&p).unwrap();
        assert_eq!((t.len(), t.dim()), (3, 2));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let toks = vec!["x".to_string(), "y".to_string()];
        let vecs = vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-7, 4.0]];
        write_embeddings(&p, &toks, &vecs).unwrap();
        let t = read_embeddings(&p).unwrap();
        assert_eq!(t.vectors().row(1), vecs[0].as_slice());
        assert_eq!(t.vectors().row(2), vecs[1].as_slice());
    }
}
