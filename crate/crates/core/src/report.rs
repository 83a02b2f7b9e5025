//! Plain-text output helpers: key=value blocks, CSV rows and the run
//! manifest. Everything is formatted deterministically ({:?} floats, no
//! timestamps), so identical runs produce byte-identical files.

use std::fs;
use std::io::Write;
use std::path::Path;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn kv_block(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())
}

pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(header: &str) -> Self {
        let mut buf = String::new();
        buf.push_str(header);
        buf.push('\n');
        CsvWriter { buf }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_and_csv_are_plain_text() {
        let block = kv_block(&[("a".into(), fmt_f64(0.5)), ("b".into(), "x".into())]);
        assert_eq!(block, "a=0.5\nb=x\n");
        let mut w = CsvWriter::new("t,phi");
        w.row(&[fmt_f64(1.0), fmt_f64(-2e-3)]);
        assert_eq!(w.finish(), "t,phi\n1.0,-0.002\n");
    }
}
