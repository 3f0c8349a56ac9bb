use thiserror::Error;

/// Every failure the library can report.
///
/// Variants group into three families that the command-line front end maps
/// onto distinct exit codes: validation problems, numerical failures and
/// fixture mismatches.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cluster sequence must start at 1 and strictly increase: {0:?}")]
    BadClusterSequence(Vec<usize>),
    #[error("k_{next}/k_{prev} = {num}/{den} is not an integer")]
    NonDivisibleK {
        prev: usize,
        next: usize,
        num: usize,
        den: usize,
    },
    #[error("overlap sequence must start at 1, end at 0 and have length {expected}; got {got}")]
    BadOverlapShape { expected: usize, got: usize },
    #[error("overlaps must strictly decrease: q_{index} = {value} is not below q_{prev}", prev = index - 1)]
    NonDecreasingQ { index: usize, value: f64 },
    #[error("gap q_{index} - q_{next} = {gap:e} is below the minimum {eps:e}", next = index + 1)]
    QGapBelowEpsilon { index: usize, gap: f64, eps: f64 },
    #[error("margin kappa must be positive and finite, got {0}")]
    NonPositiveKappa(f64),
    #[error("vector index ({i}, {j}) outside 1..={n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("argument {name} = {value} outside its domain")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("probability vector sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("gap q_{index} - q_{next} = {gap:e} makes the covariance expansion singular", next = index + 1)]
    SingularGap { index: usize, gap: f64 },
    #[error("probability factor underflows double range (log p = {log_p})")]
    QuadratureUnderflow { log_p: f64 },
    #[error("covariance matrix is not positive definite")]
    NotPsd,
    #[error("base overlap triple is infeasible: q_s2 = {0} < 0")]
    InfeasibleTriple(f64),
    #[error("k = {k} exceeds the configured limit {limit}")]
    SizeLimit { k: usize, limit: usize },
    #[error("entropy program has no nonnegative solution ({0})")]
    Infeasible(String),
    #[error("entropy solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("agreement target {0} is not an integer count")]
    TargetsNotIntegral(f64),
    #[error("no feasible point on the search grid")]
    NoFeasiblePoint,
    #[error("rounded ratio c[{0}]/c[{prev}] is zero", prev = .0 - 1)]
    ZeroRatio(usize),
    #[error("no comparison fixture for level {0}")]
    NoFixture(usize),
    #[error("unknown table id {0}")]
    UnknownTable(u32),
    #[error("fixture mismatch: {0}")]
    FixtureMismatch(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    CheckFailed(String),
}

/// Coarse error family, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Fixture,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            BadClusterSequence(_)
            | NonDivisibleK { .. }
            | BadOverlapShape { .. }
            | NonDecreasingQ { .. }
            | QGapBelowEpsilon { .. }
            | NonPositiveKappa(_)
            | IndexOutOfRange { .. }
            | OutOfRange { .. }
            | NotNormalized(_)
            | TargetsNotIntegral(_)
            | SizeLimit { .. }
            | ZeroRatio(_)
            | UnknownTable(_)
            | Parse(_)
            | Io(_) => ErrorKind::Validation,
            SingularGap { .. }
            | QuadratureUnderflow { .. }
            | NotPsd
            | InfeasibleTriple(_)
            | Infeasible(_)
            | NotConverged { .. }
            | NoFeasiblePoint
            | CheckFailed(_) => ErrorKind::Numerical,
            NoFixture(_) | FixtureMismatch(_) => ErrorKind::Fixture,
        }
    }

    /// Process exit code: 2 validation, 3 numerical, 4 fixture.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Validation => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Fixture => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
