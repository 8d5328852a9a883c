# Deep structured LQ team solvers and learners
