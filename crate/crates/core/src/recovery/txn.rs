use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxnEvent {
    Request,
    Begin,
    Prepare,
    PreliminaryComplete,
    Commit,
    End,
    Abort,
}

impl TxnEvent {
    pub const ALL: [TxnEvent; 7] = [
        TxnEvent::Request,
        TxnEvent::Begin,
        TxnEvent::Prepare,
        TxnEvent::PreliminaryComplete,
        TxnEvent::Commit,
        TxnEvent::End,
        TxnEvent::Abort,
    ];

    pub fn byte(self) -> u8 {
        match self {
            TxnEvent::Request => 1,
            TxnEvent::Begin => 2,
            TxnEvent::Prepare => 3,
            TxnEvent::PreliminaryComplete => 4,
            TxnEvent::Commit => 5,
            TxnEvent::End => 6,
            TxnEvent::Abort => 7,
        }
    }

    pub fn from_byte(b: u8) -> Option<TxnEvent> {
        TxnEvent::ALL.into_iter().find(|e| e.byte() == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            TxnEvent::Request => "request",
            TxnEvent::Begin => "begin",
            TxnEvent::Prepare => "prepare",
            TxnEvent::PreliminaryComplete => "preliminaryComplete",
            TxnEvent::Commit => "commit",
            TxnEvent::End => "end",
            TxnEvent::Abort => "abort",
        }
    }

    /// Events whose log entry may carry a payload.
    pub fn carries_payload(self) -> bool {
        matches!(self, TxnEvent::Prepare | TxnEvent::PreliminaryComplete | TxnEvent::End)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxnState {
    Requested,
    Active,
    Prepared,
    PreliminarilyComplete,
    Committed,
    Ended,
    Aborted,
}

impl TxnState {
    pub fn is_final(self) -> bool {
        matches!(self, TxnState::Ended | TxnState::Aborted)
    }

    /// The transition table. `request` only starts a transaction, so it is
    /// legal from no state at all.
    pub fn next(from: Option<TxnState>, event: TxnEvent) -> Option<TxnState> {
        use TxnEvent as E;
        use TxnState as S;
        match (from, event) {
            (None, E::Request) => Some(S::Requested),
            (Some(S::Requested), E::Begin) => Some(S::Active),
            (Some(S::Active), E::Prepare) => Some(S::Prepared),
            (Some(S::Prepared), E::PreliminaryComplete) => Some(S::PreliminarilyComplete),
            (Some(S::Prepared | S::PreliminarilyComplete), E::Commit) => Some(S::Committed),
            (Some(S::Committed), E::End) => Some(S::Ended),
            (Some(S::Requested | S::Active | S::Prepared | S::PreliminarilyComplete), E::Abort) => Some(S::Aborted),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(events: &[TxnEvent]) -> Option<TxnState> {
        events.iter().try_fold(None, |s, e| TxnState::next(s, *e).map(Some)).flatten()
    }

    #[test]
    fn legal_paths() {
        use TxnEvent::*;
        assert_eq!(run(&[Request, Begin, Prepare, Commit, End]), Some(TxnState::Ended));
        assert_eq!(run(&[Request, Begin, Prepare, PreliminaryComplete, Commit, End]), Some(TxnState::Ended));
        assert_eq!(run(&[Request, Begin, Abort]), Some(TxnState::Aborted));
        assert_eq!(run(&[Request, Abort]), Some(TxnState::Aborted));
    }

    #[test]
    fn illegal_paths() {
        use TxnEvent::*;
        assert_eq!(run(&[Request, Begin, Commit]), None);
        assert_eq!(run(&[Request, Begin, Prepare, Commit, Abort]), None);
        assert_eq!(run(&[Request, Begin, Prepare, Commit, End, End]), None);
        assert_eq!(run(&[Begin]), None);
        for e in TxnEvent::ALL {
            assert_eq!(TxnState::next(Some(TxnState::Ended), e), None);
            assert_eq!(TxnState::next(Some(TxnState::Aborted), e), None);
        }
    }

    #[test]
    fn event_bytes_round_trip() {
        for e in TxnEvent::ALL {
            assert_eq!(TxnEvent::from_byte(e.byte()), Some(e));
        }
        assert_eq!(TxnEvent::from_byte(0), None);
    }
}
