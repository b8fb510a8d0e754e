from tokendrive.harness.cli import main

raise SystemExit(main())
