//! End-to-end acceptance checks for `fcmli`. The suite is the `acceptance`
//! integration test of this crate.
