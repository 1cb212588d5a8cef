//! The compact model-notation string and its parser:
//!
//! ```text
//! [predictor]:[layers]x[size][TDL]-[initializer]:[hidden]x[history]
//! ```
//!
//! with predictor `MLFC` or `LSTM`, initializer `MLP`, `RNN`, or `Washout`
//! (which takes a single number, its warm-up length), e.g.
//! `LSTM:3x200-MLP:1000x10`, `MLFC:1x50-Washout:10`, or
//! `LSTM:2x16TDL-RNN:8x10`. Spaces between tokens are tolerated; `x`, `X`,
//! and `×` all separate the two numbers.

use crate::arch::{ArchConfig, LstmConfig, MlfcConfig, PredictorConfig};
use crate::error::{Error, Result};
use crate::init::InitConfig;
use serde::{Deserialize, Serialize};

/// Delay-line length implied by the bare `TDL` token.
pub const DEFAULT_TDL_LEN: usize = 10;

/// Predictor family named in a notation string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredKind {
    Mlfc,
    Lstm,
}

/// A fully parsed notation string; signal dimensions come from the task, so
/// they are supplied later via [`ParsedModelSpec::predictor_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedModelSpec {
    pub kind: PredKind,
    pub layers: usize,
    pub size: usize,
    /// Delay-line length when the predictor carries the `TDL` token.
    pub tdl: Option<usize>,
    pub init: InitConfig,
}

impl ParsedModelSpec {
    /// History length the initialization scheme consumes.
    pub fn tau(&self) -> usize {
        self.init.tau()
    }

    /// Resolve into a predictor configuration for concrete signal widths.
    pub fn predictor_config(&self, input_dim: usize, output_dim: usize) -> PredictorConfig {
        let arch = match self.kind {
            PredKind::Mlfc => ArchConfig::Mlfc(MlfcConfig::uniform(self.layers, self.size)),
            PredKind::Lstm => ArchConfig::Lstm(LstmConfig::new(self.layers, self.size)),
        };
        PredictorConfig {
            input_dim,
            output_dim,
            arch,
            tdl: self.tdl,
        }
    }

    /// Canonical spelling of this spec (no spaces, uppercase keywords).
    pub fn canonical(&self) -> String {
        let pred = match self.kind {
            PredKind::Mlfc => "MLFC",
            PredKind::Lstm => "LSTM",
        };
        let tdl = if self.tdl.is_some() { "TDL" } else { "" };
        let init = match &self.init {
            InitConfig::Washout { steps } => format!("Washout:{steps}"),
            InitConfig::Mlp { hidden, tau } => format!("MLP:{hidden}x{tau}"),
            InitConfig::Rnn { cells, tau } => format!("RNN:{cells}x{tau}"),
        };
        format!("{pred}:{}x{}{tdl}-{init}", self.layers, self.size)
    }
}

struct Scanner<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str) -> Scanner<'a> {
        Scanner {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn err(&self, pos: usize, msg: impl Into<String>) -> Error {
        Error::Notation {
            pos,
            msg: msg.into(),
        }
    }

    fn skip_spaces(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    /// Consume one expected punctuation character.
    fn expect_char(&mut self, wanted: char, what: &str) -> Result<()> {
        self.skip_spaces();
        match self.peek() {
            Some(c) if c == wanted => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(c) => Err(self.err(self.pos, format!("expected {what}, found '{c}'"))),
            None => Err(self.err(self.pos, format!("expected {what}, found end of spec"))),
        }
    }

    /// Consume the `x` between two numbers (`x`, `X`, or `×`).
    fn expect_separator(&mut self) -> Result<()> {
        self.skip_spaces();
        match self.peek() {
            Some(c) if c == 'x' || c == 'X' || c == '×' => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(c) => Err(self.err(
                self.pos,
                format!("expected 'x' between the two numbers, found '{c}'"),
            )),
            None => Err(self.err(
                self.pos,
                "expected 'x' between the two numbers, found end of spec",
            )),
        }
    }

    /// Consume a positive integer.
    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_spaces();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return match self.peek() {
                Some(c) => Err(self.err(start, format!("expected {what}, found '{c}'"))),
                None => Err(self.err(start, format!("expected {what}, found end of spec"))),
            };
        }
        let n: usize = self.text[start..self.pos]
            .parse()
            .map_err(|_| self.err(start, format!("{what} is out of range")))?;
        if n == 0 {
            return Err(self.err(start, format!("{what} must be at least 1")));
        }
        Ok(n)
    }

    /// Consume a keyword made of ASCII letters.
    fn word(&mut self) -> (usize, &'a str) {
        self.skip_spaces();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        (start, &self.text[start..self.pos])
    }

    /// Consume the `TDL` token if present (it is the only alphabetic token
    /// that may follow the predictor size).
    fn take_tdl(&mut self) -> Result<bool> {
        let save = self.pos;
        let (start, w) = self.word();
        if w.is_empty() {
            self.pos = save;
            return Ok(false);
        }
        if w.eq_ignore_ascii_case("tdl") {
            Ok(true)
        } else {
            Err(self.err(start, format!("unexpected token '{w}' after the predictor size (only 'TDL' may appear here)")))
        }
    }

    fn expect_end(&mut self) -> Result<()> {
        self.skip_spaces();
        if self.pos != self.bytes.len() {
            let rest = &self.text[self.pos..];
            return Err(self.err(
                self.pos,
                format!("unexpected trailing input '{rest}'"),
            ));
        }
        Ok(())
    }
}

/// Parse a model-notation string into architecture and initializer
/// configuration. Errors carry the byte position of the offending token.
pub fn parse_model_spec(text: &str) -> Result<ParsedModelSpec> {
    let mut s = Scanner::new(text);

    let (pos, pred) = s.word();
    let kind = if pred.eq_ignore_ascii_case("mlfc") {
        PredKind::Mlfc
    } else if pred.eq_ignore_ascii_case("lstm") {
        PredKind::Lstm
    } else if pred.is_empty() {
        return Err(s.err(pos, "expected a predictor name (MLFC or LSTM)"));
    } else {
        return Err(s.err(pos, format!("unknown predictor '{pred}' (expected MLFC or LSTM)")));
    };
    s.expect_char(':', "':' after the predictor name")?;
    let layers = s.number("the layer count")?;
    s.expect_separator()?;
    let size = s.number("the layer size")?;
    let tdl = if s.take_tdl()? {
        Some(DEFAULT_TDL_LEN)
    } else {
        None
    };
    s.expect_char('-', "'-' before the initializer")?;

    let (ipos, iword) = s.word();
    let init = if iword.eq_ignore_ascii_case("washout") {
        s.expect_char(':', "':' after the initializer name")?;
        let steps = s.number("the washout length")?;
        // A second number would be ambiguous: washout has no hidden layer.
        s.skip_spaces();
        if matches!(s.peek(), Some('x') | Some('X') | Some('×')) {
            return Err(s.err(
                s.pos,
                "washout takes a single number (its warm-up length)",
            ));
        }
        InitConfig::Washout { steps }
    } else if iword.eq_ignore_ascii_case("mlp") {
        s.expect_char(':', "':' after the initializer name")?;
        let hidden = s.number("the hidden-layer size")?;
        s.expect_separator()?;
        let tau = s.number("the initialization length")?;
        InitConfig::Mlp { hidden, tau }
    } else if iword.eq_ignore_ascii_case("rnn") {
        s.expect_char(':', "':' after the initializer name")?;
        let cells = s.number("the encoder cell count")?;
        s.expect_separator()?;
        let tau = s.number("the initialization length")?;
        InitConfig::Rnn { cells, tau }
    } else if iword.is_empty() {
        return Err(s.err(ipos, "expected an initializer name (MLP, RNN, or Washout)"));
    } else {
        return Err(s.err(
            ipos,
            format!("unknown initializer '{iword}' (expected MLP, RNN, or Washout)"),
        ));
    };
    s.expect_end()?;

    Ok(ParsedModelSpec {
        kind,
        layers,
        size,
        tdl,
        init,
    })
}
