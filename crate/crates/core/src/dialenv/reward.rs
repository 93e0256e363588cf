/// Outcome of one system turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TurnStatus {
    Ongoing,
    Success,
    Failure,
}

impl TurnStatus {
    pub fn is_terminal(self) -> bool {
        self != TurnStatus::Ongoing
    }
}

/// −1 per ongoing turn, `2T` on success, `−T` on failure.
pub fn handcrafted_reward(status: TurnStatus, t: u32) -> f64 {
    let t = t as f64;
    match status {
        TurnStatus::Ongoing => -1.0,
        TurnStatus::Success => 2.0 * t,
        TurnStatus::Failure => -t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_values() {
        assert_eq!(handcrafted_reward(TurnStatus::Success, 40), 80.0);
        assert_eq!(handcrafted_reward(TurnStatus::Failure, 40), -40.0);
        assert_eq!(handcrafted_reward(TurnStatus::Ongoing, 40), -1.0);
        assert!(!TurnStatus::Ongoing.is_terminal());
    }
}
