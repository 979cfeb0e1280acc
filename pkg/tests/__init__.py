# Tests for tendon-mux
