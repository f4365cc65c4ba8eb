//! Quantized sketch-extrude command sequences.
//!
//! A sequence file holds one CAD model per line. Each line is a `;`-separated
//! list of 17-integer tokens `t,x,y,α,f,r,θ,φ,γ,px,py,pz,s,e1,e2,u,b`,
//! optionally prefixed with `source_id|`. Tokens with `t = 4` separate loops
//! and a token with `t = 5` closes the current sketch profile into an
//! extrusion record. Unused fields carry the sentinel `-1`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use thiserror::Error;

/// Number of parameter fields following the command code.
pub const FIELD_COUNT: usize = 16;
/// Sentinel for parameter slots a command does not use.
pub const UNUSED: i32 = -1;

pub const F_X: usize = 0;
pub const F_Y: usize = 1;
pub const F_ALPHA: usize = 2;
pub const F_FLAG: usize = 3;
pub const F_RADIUS: usize = 4;
pub const F_THETA: usize = 5;
pub const F_PHI: usize = 6;
pub const F_GAMMA: usize = 7;
pub const F_PX: usize = 8;
pub const F_PY: usize = 9;
pub const F_PZ: usize = 10;
pub const F_SCALE: usize = 11;
pub const F_E1: usize = 12;
pub const F_E2: usize = 13;
pub const F_OP: usize = 14;
pub const F_SIDES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenKind {
    Line,
    Arc,
    Circle,
    LoopSeparator,
    Extrusion,
}

impl TokenKind {
    pub fn from_code(code: i32) -> Option<Self> {
        match code {
            0 => Some(Self::Line),
            1 => Some(Self::Arc),
            2 => Some(Self::Circle),
            4 => Some(Self::LoopSeparator),
            5 => Some(Self::Extrusion),
            _ => None,
        }
    }

    pub fn code(self) -> i32 {
        match self {
            Self::Line => 0,
            Self::Arc => 1,
            Self::Circle => 2,
            Self::LoopSeparator => 4,
            Self::Extrusion => 5,
        }
    }

    /// Field slots this command reads; every other slot must hold [`UNUSED`].
    pub fn used_fields(self) -> &'static [usize] {
        match self {
            Self::Line => &[F_X, F_Y],
            Self::Arc => &[F_X, F_Y, F_ALPHA, F_FLAG],
            Self::Circle => &[F_X, F_Y, F_RADIUS],
            Self::LoopSeparator => &[],
            Self::Extrusion => &[
                F_THETA, F_PHI, F_GAMMA, F_PX, F_PY, F_PZ, F_SCALE, F_E1, F_E2, F_OP, F_SIDES,
            ],
        }
    }
}

/// One raw 17-field command vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawToken {
    pub kind: TokenKind,
    pub fields: [i32; FIELD_COUNT],
}

impl RawToken {
    pub fn new(kind: TokenKind) -> Self {
        Self { kind, fields: [UNUSED; FIELD_COUNT] }
    }

    pub fn with(mut self, field: usize, value: u8) -> Self {
        self.fields[field] = i32::from(value);
        self
    }

    fn field(&self, idx: usize) -> u8 {
        // Range was checked when the token was built or parsed.
        self.fields[idx] as u8
    }
}

impl fmt::Display for RawToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.code())?;
        for v in &self.fields {
            write!(f, ",{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveSpec {
    /// Segment ending at `(x, y)`; it starts where the previous primitive ended.
    Line { x: u8, y: u8 },
    /// Arc ending at `(x, y)` with quantized sweep `alpha` and side flag.
    Arc { x: u8, y: u8, alpha: u8, flag: u8 },
    Circle { x: u8, y: u8, radius: u8 },
}

impl PrimitiveSpec {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Self::Line { .. } => PrimitiveKind::Line,
            Self::Arc { .. } => PrimitiveKind::Arc,
            Self::Circle { .. } => PrimitiveKind::Circle,
        }
    }

    pub fn point(&self) -> (u8, u8) {
        match *self {
            Self::Line { x, y } | Self::Arc { x, y, .. } | Self::Circle { x, y, .. } => (x, y),
        }
    }

    fn to_token(self) -> RawToken {
        match self {
            Self::Line { x, y } => RawToken::new(TokenKind::Line).with(F_X, x).with(F_Y, y),
            Self::Arc { x, y, alpha, flag } => RawToken::new(TokenKind::Arc)
                .with(F_X, x)
                .with(F_Y, y)
                .with(F_ALPHA, alpha)
                .with(F_FLAG, flag),
            Self::Circle { x, y, radius } => RawToken::new(TokenKind::Circle)
                .with(F_X, x)
                .with(F_Y, y)
                .with(F_RADIUS, radius),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Line,
    Arc,
    Circle,
}

impl PrimitiveKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Line => "line",
            Self::Arc => "arc",
            Self::Circle => "circle",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoopSpec {
    pub primitives: Vec<PrimitiveSpec>,
}

impl LoopSpec {
    pub fn new(primitives: Vec<PrimitiveSpec>) -> Self {
        Self { primitives }
    }

    /// Coarse loop classification used by the statistics report.
    pub fn loop_kind(&self) -> &'static str {
        let has = |k| self.primitives.iter().any(|p| p.kind() == k);
        if self.primitives.len() == 1 && has(PrimitiveKind::Circle) {
            "Circle"
        } else if self.primitives.is_empty() {
            "Empty"
        } else if has(PrimitiveKind::Circle) {
            "Mixed"
        } else {
            match (has(PrimitiveKind::Line), has(PrimitiveKind::Arc)) {
                (true, false) => "LineLoop",
                (false, true) => "ArcLoop",
                _ => "Mixed",
            }
        }
    }
}

/// One sketch profile together with its extrusion parameters, still quantized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtrusionRecordRaw {
    pub loops: Vec<LoopSpec>,
    /// Quantized plane angles (θ, φ, γ).
    pub plane: [u8; 3],
    /// Quantized sketch origin (px, py, pz).
    pub origin: [u8; 3],
    pub scale: u8,
    /// Quantized extents (e1, e2).
    pub extents: [u8; 2],
    /// 0 new, 1 remove, 2 union.
    pub op: u8,
    /// 0 one-sided, 1 symmetric, 2 two-sided.
    pub sides: u8,
}

impl ExtrusionRecordRaw {
    fn extrusion_token(&self) -> RawToken {
        RawToken::new(TokenKind::Extrusion)
            .with(F_THETA, self.plane[0])
            .with(F_PHI, self.plane[1])
            .with(F_GAMMA, self.plane[2])
            .with(F_PX, self.origin[0])
            .with(F_PY, self.origin[1])
            .with(F_PZ, self.origin[2])
            .with(F_SCALE, self.scale)
            .with(F_E1, self.extents[0])
            .with(F_E2, self.extents[1])
            .with(F_OP, self.op)
            .with(F_SIDES, self.sides)
    }

    pub fn primitive_count(&self) -> usize {
        self.loops.iter().map(|l| l.primitives.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CadSequence {
    pub source_id: String,
    pub records: Vec<ExtrusionRecordRaw>,
}

impl CadSequence {
    /// Flattens the sequence back into raw tokens.
    pub fn tokens(&self) -> Vec<RawToken> {
        let mut out = Vec::new();
        for rec in &self.records {
            for (i, lp) in rec.loops.iter().enumerate() {
                if i > 0 {
                    out.push(RawToken::new(TokenKind::LoopSeparator));
                }
                out.extend(lp.primitives.iter().map(|p| p.to_token()));
            }
            out.push(rec.extrusion_token());
        }
        out
    }

    /// Serializes to the single-line file form accepted by [`parse_sequence`].
    pub fn to_line(&self) -> String {
        let body = self
            .tokens()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";");
        if self.source_id.is_empty() {
            body
        } else {
            format!("{}|{}", self.source_id, body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed token {index}: {reason}")]
    MalformedToken { index: usize, reason: String },
    #[error("{pending} trailing token(s) are not closed by an extrusion token")]
    DanglingLoop { pending: usize },
    #[error("sequence contains no tokens")]
    EmptySequence,
}

fn malformed(index: usize, reason: impl Into<String>) -> ParseError {
    ParseError::MalformedToken { index, reason: reason.into() }
}

fn parse_token(index: usize, text: &str) -> Result<RawToken, ParseError> {
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<i32>().map_err(|e| malformed(index, format!("{v:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != FIELD_COUNT + 1 {
        return Err(malformed(index, format!("expected 17 values, found {}", values.len())));
    }
    let kind = TokenKind::from_code(values[0])
        .ok_or_else(|| malformed(index, format!("undefined command code {}", values[0])))?;
    let mut fields = [UNUSED; FIELD_COUNT];
    fields.copy_from_slice(&values[1..]);
    let used = kind.used_fields();
    for (slot, &v) in fields.iter().enumerate() {
        if used.contains(&slot) {
            if !(0..=255).contains(&v) {
                return Err(malformed(index, format!("field {slot} = {v} outside [0, 255]")));
            }
        } else if v != UNUSED {
            return Err(malformed(index, format!("unused field {slot} must be -1, found {v}")));
        }
    }
    Ok(RawToken { kind, fields })
}

/// Groups a flat token stream into extrusion records.
pub fn group_tokens(source_id: &str, tokens: &[RawToken]) -> Result<CadSequence, ParseError> {
    if tokens.is_empty() {
        return Err(ParseError::EmptySequence);
    }
    let mut records = Vec::new();
    let mut loops: Vec<LoopSpec> = Vec::new();
    let mut current = LoopSpec::default();
    let mut pending = 0usize;
    for tok in tokens {
        pending += 1;
        match tok.kind {
            TokenKind::Line => current.primitives.push(PrimitiveSpec::Line {
                x: tok.field(F_X),
                y: tok.field(F_Y),
            }),
            TokenKind::Arc => current.primitives.push(PrimitiveSpec::Arc {
                x: tok.field(F_X),
                y: tok.field(F_Y),
                alpha: tok.field(F_ALPHA),
                flag: tok.field(F_FLAG),
            }),
            TokenKind::Circle => current.primitives.push(PrimitiveSpec::Circle {
                x: tok.field(F_X),
                y: tok.field(F_Y),
                radius: tok.field(F_RADIUS),
            }),
            TokenKind::LoopSeparator => loops.push(std::mem::take(&mut current)),
            TokenKind::Extrusion => {
                loops.push(std::mem::take(&mut current));
                records.push(ExtrusionRecordRaw {
                    loops: std::mem::take(&mut loops),
                    plane: [tok.field(F_THETA), tok.field(F_PHI), tok.field(F_GAMMA)],
                    origin: [tok.field(F_PX), tok.field(F_PY), tok.field(F_PZ)],
                    scale: tok.field(F_SCALE),
                    extents: [tok.field(F_E1), tok.field(F_E2)],
                    op: tok.field(F_OP),
                    sides: tok.field(F_SIDES),
                });
                pending = 0;
            }
        }
    }
    if pending > 0 {
        return Err(ParseError::DanglingLoop { pending });
    }
    Ok(CadSequence { source_id: source_id.to_string(), records })
}

/// Parses one sequence line. A `source_id|` prefix is optional.
pub fn parse_sequence(line: &str) -> Result<CadSequence, ParseError> {
    let line = line.trim();
    let (source_id, body) = match line.split_once('|') {
        Some((id, body)) => (id.trim(), body),
        None => ("", line),
    };
    let tokens = body
        .split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| parse_token(i, t))
        .collect::<Result<Vec<_>, _>>()?;
    group_tokens(source_id, &tokens)
}

/// One non-comment line of a `.cadseq` file.
#[derive(Debug, Clone)]
pub struct SequenceLine {
    /// 1-based physical line number.
    pub line_no: usize,
    pub text: String,
    pub parsed: Result<CadSequence, ParseError>,
}

impl SequenceLine {
    /// The line's declared source id, or `line<N>` when it has none or
    /// cannot be parsed.
    pub fn source_id(&self) -> String {
        match &self.parsed {
            Ok(seq) if !seq.source_id.is_empty() => seq.source_id.clone(),
            Ok(_) => format!("line{}", self.line_no),
            Err(_) => match self.text.split_once('|') {
                Some((id, _)) if !id.trim().is_empty() => id.trim().to_string(),
                _ => format!("line{}", self.line_no),
            },
        }
    }
}

/// Parses a whole `.cadseq` file; blank lines and `#` comments are skipped.
/// Each line parses independently so one corrupt line never hides the rest.
pub fn parse_file(text: &str) -> Vec<SequenceLine> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| {
            let mut parsed = parse_sequence(l);
            let line_no = i + 1;
            if let Ok(seq) = &mut parsed {
                if seq.source_id.is_empty() {
                    seq.source_id = format!("line{line_no}");
                }
            }
            SequenceLine { line_no, text: l.trim().to_string(), parsed }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Range,
    FirstOp,
    OpOrder,
    LoopArity,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    pub record: usize,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "record {}: {}", v.record, v.message)?;
        }
        Ok(())
    }
}

/// Checks semantic constraints the grammar cannot express.
pub fn validate(seq: &CadSequence) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |record, kind, message: String| violations.push(Violation { record, kind, message });

    for (ri, rec) in seq.records.iter().enumerate() {
        if ri == 0 && rec.op != 0 {
            push(ri, ViolationKind::FirstOp, "first op must be new".into());
        }
        if ri > 0 && rec.op == 0 {
            push(ri, ViolationKind::OpOrder, "new op is only valid for the first record".into());
        }
        if rec.op > 2 {
            push(ri, ViolationKind::Range, format!("op u = {} outside {{0,1,2}}", rec.op));
        }
        if rec.sides > 2 {
            push(ri, ViolationKind::Range, format!("sides b = {} outside {{0,1,2}}", rec.sides));
        }
        if rec.scale == 0 {
            push(ri, ViolationKind::Range, "scale s must be positive".into());
        }
        for (li, lp) in rec.loops.iter().enumerate() {
            let n = lp.primitives.len();
            let circles = lp.primitives.iter().filter(|p| p.kind() == PrimitiveKind::Circle).count();
            if n == 0 {
                push(ri, ViolationKind::LoopArity, format!("loop {li} is empty"));
            } else if circles > 0 && n != 1 {
                push(ri, ViolationKind::LoopArity, format!("circle loop arity: loop {li} has {n} primitives"));
            } else if circles == 0 && n < 2 {
                push(ri, ViolationKind::LoopArity, format!("loop {li} needs at least 2 primitives"));
            }
            for p in &lp.primitives {
                match *p {
                    PrimitiveSpec::Arc { alpha, flag, .. } => {
                        if flag > 1 {
                            push(ri, ViolationKind::Range, format!("arc flag f = {flag} outside {{0,1}}"));
                        }
                        if alpha == 0 {
                            push(ri, ViolationKind::Range, "arc sweep alpha must be at least 1".into());
                        }
                    }
                    PrimitiveSpec::Circle { radius: 0, .. } => {
                        push(ri, ViolationKind::Range, "circle radius must be at least 1".into());
                    }
                    _ => {}
                }
            }
        }
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no sequences to summarize")]
    EmptyInput,
}

/// Histograms over a corpus of sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatsTable {
    pub primitive_kinds: BTreeMap<String, usize>,
    pub loop_kinds: BTreeMap<String, usize>,
    pub loops_per_record: BTreeMap<usize, usize>,
    pub records_per_sequence: BTreeMap<usize, usize>,
}

impl StatsTable {
    /// Rows of `(section, key, count)`.
    pub fn rows(&self) -> Vec<(String, String, usize)> {
        let mut rows = Vec::new();
        for (k, v) in &self.primitive_kinds {
            rows.push(("primitive_kind".to_string(), k.clone(), *v));
        }
        for (k, v) in &self.loop_kinds {
            rows.push(("loop_kind".to_string(), k.clone(), *v));
        }
        for (k, v) in &self.loops_per_record {
            rows.push(("loops_per_record".to_string(), k.to_string(), *v));
        }
        for (k, v) in &self.records_per_sequence {
            rows.push(("records_per_sequence".to_string(), k.to_string(), *v));
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["section", "key", "count"])?;
        for (s, k, v) in self.rows() {
            w.write_record([s, k, v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn sequence_stats(seqs: &[CadSequence]) -> Result<StatsTable, StatsError> {
    if seqs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut t = StatsTable::default();
    for seq in seqs {
        *t.records_per_sequence.entry(seq.records.len()).or_default() += 1;
        for rec in &seq.records {
            *t.loops_per_record.entry(rec.loops.len()).or_default() += 1;
            for lp in &rec.loops {
                *t.loop_kinds.entry(lp.loop_kind().to_string()).or_default() += 1;
                for p in &lp.primitives {
                    let name = match p.kind() {
                        PrimitiveKind::Line => "Line",
                        PrimitiveKind::Arc => "Arc",
                        PrimitiveKind::Circle => "Circle",
                    };
                    *t.primitive_kinds.entry(name.to_string()).or_default() += 1;
                }
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_line() -> String {
        "2,128,128,-1,-1,64,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
         5,-1,-1,-1,-1,-1,128,128,128,128,128,128,128,160,128,0,0"
            .to_string()
    }

    fn square(op: u8) -> String {
        let pts = [(64, 64), (192, 64), (192, 192), (64, 192)];
        let mut toks: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("0,{x},{y},-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1"))
            .collect();
        toks.push(format!("5,-1,-1,-1,-1,-1,128,128,128,128,128,128,128,160,128,{op},0"));
        toks.join(";")
    }

    #[test]
    fn minimal_circle_sequence() {
        let seq = parse_sequence(&circle_line()).unwrap();
        assert_eq!(seq.records.len(), 1);
        assert_eq!(seq.records[0].loops.len(), 1);
        assert_eq!(
            seq.records[0].loops[0].primitives,
            vec![PrimitiveSpec::Circle { x: 128, y: 128, radius: 64 }]
        );
        assert_eq!(seq.records[0].scale, 128);
        assert_eq!(seq.records[0].extents, [160, 128]);
    }

    #[test]
    fn undefined_code_is_malformed() {
        let line = circle_line().replacen("2,", "3,", 1);
        assert!(matches!(parse_sequence(&line), Err(ParseError::MalformedToken { index: 0, .. })));
    }

    #[test]
    fn wrong_arity_and_sentinel_drift_are_malformed() {
        let short = "0,1,2;5,-1,-1,-1,-1,-1,128,128,128,128,128,128,128,160,128,0,0";
        assert!(matches!(parse_sequence(short), Err(ParseError::MalformedToken { .. })));
        // a line token carrying a radius
        let drift = "0,10,10,-1,-1,5,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;5,-1,-1,-1,-1,-1,128,128,128,128,128,128,128,160,128,0,0";
        assert!(matches!(parse_sequence(drift), Err(ParseError::MalformedToken { index: 0, .. })));
        let range = "0,300,10,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;5,-1,-1,-1,-1,-1,128,128,128,128,128,128,128,160,128,0,0";
        assert!(matches!(parse_sequence(range), Err(ParseError::MalformedToken { .. })));
    }

    #[test]
    fn unterminated_record_dangles() {
        let line = format!("{};0,10,10,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1", circle_line());
        assert_eq!(parse_sequence(&line), Err(ParseError::DanglingLoop { pending: 1 }));
        assert_eq!(parse_sequence("   "), Err(ParseError::EmptySequence));
    }

    #[test]
    fn source_id_prefix_and_roundtrip() {
        let line = format!("abc-1|{}", square(0));
        let seq = parse_sequence(&line).unwrap();
        assert_eq!(seq.source_id, "abc-1");
        assert_eq!(parse_sequence(&seq.to_line()).unwrap(), seq);
    }

    #[test]
    fn validation_reports() {
        let two = format!("{};{}", square(0), square(2));
        assert!(validate(&parse_sequence(&two).unwrap()).is_valid());

        let bad_first = parse_sequence(&square(1)).unwrap();
        let report = validate(&bad_first);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].message, "first op must be new");

        let two_circles = "2,128,128,-1,-1,64,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                           2,100,128,-1,-1,10,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                           5,-1,-1,-1,-1,-1,128,128,128,128,128,128,128,160,128,0,0";
        let report = validate(&parse_sequence(two_circles).unwrap());
        assert!(report.violations.iter().any(|v| v.message.starts_with("circle loop arity")));
        // validate is pure
        assert_eq!(report, validate(&parse_sequence(two_circles).unwrap()));
    }

    #[test]
    fn loop_and_record_counts_follow_grammar() {
        let line = format!(
            "{};4,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;{}",
            square(0).rsplit_once(';').unwrap().0,
            circle_line()
        );
        let seq = parse_sequence(&line).unwrap();
        let tokens = seq.tokens();
        let t4 = tokens.iter().filter(|t| t.kind == TokenKind::LoopSeparator).count();
        let t5 = tokens.iter().filter(|t| t.kind == TokenKind::Extrusion).count();
        let loops: usize = seq.records.iter().map(|r| r.loops.len()).sum();
        assert_eq!(seq.records.len(), t5);
        assert_eq!(loops, t4 + t5);
        assert_eq!(seq.records[0].loops.len(), 2);
    }

    #[test]
    fn stats_count_loop_kinds() {
        let line = "2,128,128,-1,-1,64,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                    4,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                    2,60,60,-1,-1,10,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                    4,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                    0,10,10,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                    0,20,10,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                    0,20,20,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1;\
                    5,-1,-1,-1,-1,-1,128,128,128,128,128,128,128,160,128,0,0";
        let t = sequence_stats(&[parse_sequence(line).unwrap()]).unwrap();
        assert_eq!(t.loop_kinds.get("Circle"), Some(&2));
        assert_eq!(t.loop_kinds.get("LineLoop"), Some(&1));
        assert_eq!(t.primitive_kinds.get("Line"), Some(&3));
        assert_eq!(sequence_stats(&[]), Err(StatsError::EmptyInput));
    }

    #[test]
    fn file_skips_comments_and_isolates_errors() {
        let text = format!("# header\n{}\n\n3,1\n{}\n", circle_line(), square(0));
        let lines = parse_file(&text);
        assert_eq!(lines.len(), 3);
        assert!(lines[0].parsed.is_ok());
        assert!(lines[1].parsed.is_err());
        assert_eq!(lines[1].source_id(), "line4");
        assert_eq!(lines[2].parsed.as_ref().unwrap().source_id, "line5");
    }
}
