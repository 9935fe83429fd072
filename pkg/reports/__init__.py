# Output generation for MAP test runs: CSV, SVG, scenario and verification reports
